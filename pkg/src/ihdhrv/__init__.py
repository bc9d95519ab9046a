"""HRV feature extraction and neural-network classification of ischemic heart disease."""

__version__ = "0.1.0"
