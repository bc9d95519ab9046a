"""Canonical feature identifiers shared across the pipeline."""

HRV_FEATURES = (
    "meanRR",
    "SDNN",
    "RMSSD",
    "NN50",
    "pNN50",
    "LF",
    "HF",
    "LFn",
    "HFn",
    "LF_HF",
    "SD1",
    "SD2",
    "SD1_SD2",
    "FD",
    "beta",
)

CLINICAL_FEATURES = ("age", "sex", "lvef")

# column order of every feature matrix in the package
FEATURE_IDS = HRV_FEATURES + CLINICAL_FEATURES

_INDEX = {name: i for i, name in enumerate(FEATURE_IDS)}


def feature_index(name: str) -> int:
    try:
        return _INDEX[name]
    except KeyError:
        raise ValueError(f"unknown feature id {name!r}") from None


def validate_subset(subset) -> tuple:
    """Return ``subset`` as a tuple after checking ids and duplicates."""
    subset = tuple(subset)
    for name in subset:
        feature_index(name)
    if len(set(subset)) != len(subset):
        raise ValueError(f"duplicate feature ids in {subset}")
    return subset
