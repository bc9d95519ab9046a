"""Command-line entry point: ``ihdhrv {synth,extract,train,search}``.

Settings come from built-in defaults, then an optional JSON ``--config``
document, then command-line flags (later sources win). Every command writes
a manifest echoing the resolved configuration, the seeds, and SHA-256
digests of its inputs and outputs.

Exit codes: 0 success, 1 invalid input or configuration, 2 a subject has no
accepted segments (extract), 3 training diverged (train) or every search
configuration failed (search).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from . import dataset as ds_mod
from .evaluation import evaluate, format_evaluation_json, format_roc_csv
from .feature_ids import HRV_FEATURES, validate_subset
from .hrv_features import (FeatureConfig, aggregate_24h, format_feature_table,
                           parse_feature_table, segment_features)
from .mlp import TrainConfig, TrainingDiverged, init_model, save_model, train
from .preprocess import GateConfig, preprocess_series
from .rr_io import (DEFAULT_SIGNAL_FEATURES, Label, RRFormatError, Sex, SubjectMeta,
                    format_rr_file, format_subject_meta, gen_modulated_rr, gen_two_class_cohort,
                    hrv_part, parse_rr_file, parse_subject_meta, rng_from_seed)
from .search import RandomSample, SearchSpec, report_search, run_search

log = logging.getLogger("ihdhrv")

OUT_ENV = "IHDHRV_OUT"
EXIT_OK, EXIT_INPUT, EXIT_NO_SEGMENTS, EXIT_DIVERGED = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class PreprocessKnobs:
    seg_len_s: float = 300.0
    max_run_s: float = 10.0
    max_abnormal_fraction: float = 0.20
    min_normal_beats: int = 4
    fs_hz: float = 2.0


@dataclass
class FeatureKnobs:
    lf_band: list = field(default_factory=lambda: [0.04, 0.15])
    hf_band: list = field(default_factory=lambda: [0.15, 0.40])
    beta_fit_lo_hz: float | None = None
    beta_fit_hi_hz: float = 0.40
    kmax: int = 16


@dataclass
class DatasetKnobs:
    train_frac: float = 0.75
    stratified: bool = True
    standardize: bool = True


@dataclass
class TrainKnobs:
    feature_subset: list = field(default_factory=lambda: ["lvef", "sex", "age", *DEFAULT_SIGNAL_FEATURES])
    n_hidden: int = 7
    learning_rate: float = 0.1
    momentum: float = 0.9
    max_epochs: int = 1000
    sse_threshold: float = 0.05
    init_scale: float = 0.5


@dataclass
class SearchKnobs:
    mandatory_features: list = field(default_factory=lambda: ["lvef", "sex", "age"])
    candidate_features: list = field(default_factory=lambda: list(HRV_FEATURES))
    hidden_range: list = field(default_factory=lambda: [2, 10])
    input_range: list = field(default_factory=lambda: [4, 18])
    random_sample: int | None = None
    seeds_per_config: int = 1


@dataclass
class SynthKnobs:
    mode: str = "rr"                 # "rr": RR files + metadata; "features": feature table + metadata
    n_subjects: int = 4
    duration_s: float = 3600.0
    base_ms: float = 800.0
    mod_amp_ms: float = 20.0
    mod_freq_hz: float = 0.1
    noise_ms: float = 15.0
    n_per_class: int = 50
    separation: float = 6.0
    signal_features: list = field(default_factory=lambda: list(DEFAULT_SIGNAL_FEATURES))


@dataclass
class RunConfig:
    rr_dir: str | None = None
    meta: str | None = None
    features: str | None = None
    out: str | None = None
    seed: int = 0
    jobs: int = 1
    preprocess: PreprocessKnobs = field(default_factory=PreprocessKnobs)
    feature: FeatureKnobs = field(default_factory=FeatureKnobs)
    dataset: DatasetKnobs = field(default_factory=DatasetKnobs)
    train: TrainKnobs = field(default_factory=TrainKnobs)
    search: SearchKnobs = field(default_factory=SearchKnobs)
    synth: SynthKnobs = field(default_factory=SynthKnobs)

    def to_dict(self) -> dict:
        return asdict(self)

    # --- converters to the library objects ---------------------------------

    def gate_config(self) -> GateConfig:
        p = self.preprocess
        return GateConfig(p.max_run_s, p.max_abnormal_fraction, p.min_normal_beats)

    def feature_config(self) -> FeatureConfig:
        f = self.feature
        return FeatureConfig(tuple(f.lf_band), tuple(f.hf_band), f.beta_fit_lo_hz,
                             f.beta_fit_hi_hz, f.kmax)

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(t.learning_rate, t.momentum, t.max_epochs, t.sse_threshold,
                           t.init_scale, self.seed)

    def search_spec(self) -> SearchSpec:
        s = self.search
        strategy = None if s.random_sample is None else RandomSample(s.random_sample, self.seed)
        return SearchSpec(tuple(s.mandatory_features), tuple(s.candidate_features),
                          tuple(s.hidden_range), tuple(s.input_range), strategy,
                          s.seeds_per_config, self.train_config())


def _merge(obj, updates: dict, path: str = ""):
    known = {f.name: f for f in fields(obj)}
    for key, value in updates.items():
        if key not in known:
            raise ConfigError(f"unknown config key {path + key!r}")
        current = getattr(obj, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path + key!r} must be an object")
            _merge(current, value, path + key + ".")
        else:
            setattr(obj, key, value)


def load_config(path: str | None, overrides: dict) -> RunConfig:
    cfg = RunConfig()
    if path:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        _merge(cfg, doc)
    _merge(cfg, {k: v for k, v in overrides.items() if v is not None and not isinstance(v, dict)})
    for section, vals in overrides.items():
        if isinstance(vals, dict):
            _merge(cfg, {section: {k: v for k, v in vals.items() if v is not None}})
    if cfg.out is None:
        cfg.out = os.environ.get(OUT_ENV, "out")
    if cfg.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    return cfg


# ---------------------------------------------------------------------------
# file helpers
# ---------------------------------------------------------------------------

def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _read(path, what: str) -> bytes:
    if path is None:
        raise ConfigError(f"no {what} given")
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read {what} {path}: {e.strerror}") from None


def write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Outputs:
    """Collects written files so the manifest can list their digests."""

    def __init__(self, root: str):
        self.root = Path(root)
        self.digests: dict[str, str] = {}

    def write(self, name: str, data: bytes) -> Path:
        path = self.root / name
        write_atomic(path, data)
        self.digests[name] = _digest(data)
        return path

    def manifest(self, name: str, command: str, cfg: RunConfig, inputs: dict, extra=None) -> None:
        doc = {
            "command": command,
            "config": cfg.to_dict(),
            "seeds": {"master": cfg.seed},
            "inputs": inputs,
            "outputs": dict(sorted(self.digests.items())),
        }
        if extra:
            doc.update(extra)
        write_atomic(self.root / name, (json.dumps(doc, indent=2) + "\n").encode("utf-8"))


def _load_meta(cfg: RunConfig, inputs: dict) -> list[SubjectMeta]:
    raw = _read(cfg.meta, "subject metadata file")
    inputs[str(cfg.meta)] = _digest(raw)
    return parse_subject_meta(raw, source=str(cfg.meta))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig) -> int:
    s = cfg.synth
    out = _Outputs(cfg.out)
    rng = rng_from_seed(cfg.seed)
    if s.mode == "rr":
        if s.n_subjects < 1:
            raise ConfigError("synth.n_subjects must be >= 1")
        subjects = []
        width = len(str(s.n_subjects))
        for i in range(s.n_subjects):
            sid = f"s{i + 1:0{width}d}"
            try:
                series = gen_modulated_rr(s.base_ms, s.mod_amp_ms, s.mod_freq_hz, s.duration_s,
                                          seed=cfg.seed + i, noise_ms=s.noise_ms, subject_id=sid)
            except ValueError as e:
                raise ConfigError(f"invalid RR generator parameters: {e}") from None
            out.write(f"rr/{sid}.csv", format_rr_file(series))
            label = Label.IHD if i % 2 == 0 else Label.NORMAL
            subjects.append(SubjectMeta(sid, label, int(rng.integers(40, 80)),
                                        Sex.M if rng.random() < 0.5 else Sex.F,
                                        round(float(rng.uniform(35.0, 65.0)), 1)))
        out.write("meta.csv", format_subject_meta(subjects))
    elif s.mode == "features":
        try:
            subjects, vectors = gen_two_class_cohort(s.n_per_class, s.separation, cfg.seed,
                                                     tuple(s.signal_features))
        except ValueError as e:
            raise ConfigError(f"invalid cohort parameters: {e}") from None
        out.write("meta.csv", format_subject_meta(subjects))
        out.write("features.csv", format_feature_table(
            (m.subject_id, hrv_part(v)) for m, v in zip(subjects, vectors)))
    else:
        raise ConfigError(f"unknown synth mode {s.mode!r}")
    out.manifest("synth_manifest.json", "synth", cfg, {})
    return EXIT_OK


def cmd_extract(cfg: RunConfig) -> int:
    inputs: dict = {}
    subjects = _load_meta(cfg, inputs)
    if cfg.rr_dir is None:
        raise ConfigError("no RR directory given (--rr-dir)")
    gate_cfg, feat_cfg = cfg.gate_config(), cfg.feature_config()
    rows, seg_lines, empty = [], ["subject_id,index,accepted,reason"], []
    for subj in subjects:
        path = Path(cfg.rr_dir) / f"{subj.subject_id}.csv"
        raw = _read(path, "RR file")
        inputs[str(path)] = _digest(raw)
        series = parse_rr_file(raw, subj.subject_id, source=str(path))
        segments, accepted = preprocess_series(series, cfg.preprocess.seg_len_s, gate_cfg,
                                               cfg.preprocess.fs_hz)
        for seg in segments:
            reason = "" if seg.rejection_reason is None else seg.rejection_reason.value
            seg_lines.append(f"{subj.subject_id},{seg.index},{str(seg.accepted).lower()},{reason}")
        if not accepted:
            empty.append(subj.subject_id)
            continue
        frags = [segment_features(seg, tach, feat_cfg) for seg, tach in accepted]
        rows.append((subj.subject_id, aggregate_24h(frags)))
        log.info("%s: %d/%d segments accepted", subj.subject_id, len(accepted), len(segments))

    out = _Outputs(cfg.out)
    out.write("features.csv", format_feature_table(rows))
    out.write("segments.csv", ("\n".join(seg_lines) + "\n").encode("utf-8"))
    out.manifest("extract_manifest.json", "extract", cfg, inputs,
                 {"subjects_without_accepted_segments": empty})
    if empty:
        print("no accepted segments for: " + ", ".join(empty), file=sys.stderr)
        return EXIT_NO_SEGMENTS
    return EXIT_OK


def _load_dataset(cfg: RunConfig, inputs: dict, feature_subset) -> ds_mod.LabeledDataset:
    subjects = _load_meta(cfg, inputs)
    raw = _read(cfg.features, "feature table")
    inputs[str(cfg.features)] = _digest(raw)
    table = parse_feature_table(raw, source=str(cfg.features))
    try:
        return ds_mod.assemble(subjects, table, feature_subset)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _split(cfg: RunConfig, ds: ds_mod.LabeledDataset, stat_features):
    d = cfg.dataset
    try:
        sd = ds_mod.split(ds, d.train_frac, cfg.seed, d.stratified)
        return ds_mod.standardize(sd, stat_features) if d.standardize else sd
    except ValueError as e:
        raise ConfigError(str(e)) from None


def cmd_train(cfg: RunConfig) -> int:
    try:
        subset = validate_subset(cfg.train.feature_subset)
        tcfg = cfg.train_config()
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if not subset:
        raise ConfigError("train.feature_subset is empty")
    inputs: dict = {}
    sd = _split(cfg, _load_dataset(cfg, inputs, subset), subset)
    try:
        init = init_model(len(subset), cfg.train.n_hidden, subset, cfg.seed, tcfg.init_scale)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    try:
        outcome = train(init, sd.train.X, sd.train.y, tcfg)
    except TrainingDiverged as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    model = outcome.model.with_standardization(sd.standardization)
    ev_tr, ev_va = evaluate(model, sd.train), evaluate(model, sd.validation)

    out = _Outputs(cfg.out)
    out.write("model.json", save_model(model, tcfg, outcome))
    out.write("eval_train.json", format_evaluation_json(ev_tr))
    out.write("eval_validation.json", format_evaluation_json(ev_va))
    out.write("roc_train.csv", format_roc_csv(ev_tr.roc))
    out.write("roc_validation.csv", format_roc_csv(ev_va.roc))
    out.write("dataset.csv", ds_mod.format_dataset_csv(sd))
    out.write("dataset_manifest.json", ds_mod.format_split_manifest(sd))
    out.manifest("train_manifest.json", "train", cfg, inputs,
                 {"outcome": outcome.summary(),
                  "seeds": {"master": cfg.seed, "split": cfg.seed, "init": cfg.seed}})
    log.info("validation AUC %.3f, accuracy %.1f%%", ev_va.roc.auc, 100 * ev_va.metrics.acc)
    return EXIT_OK


def cmd_search(cfg: RunConfig) -> int:
    try:
        spec = cfg.search_spec()
    except ValueError as e:
        raise ConfigError(str(e)) from None
    inputs: dict = {}
    ds = _load_dataset(cfg, inputs, ())
    pool = spec.mandatory_features + spec.candidate_features
    sd = _split(cfg, ds, pool)
    result = run_search(spec, sd, jobs=cfg.jobs, manifest_ref=ds_mod.split_manifest(sd))

    out = _Outputs(cfg.out)
    if result.best_model is not None:
        out.write("best_model.json", save_model(result.best_model, spec.train_config))
    report_csv, report_json = report_search(result, "best_model.json")
    out.write("search_report.csv", report_csv)
    out.write("search_summary.json", report_json)
    out.write("dataset.csv", ds_mod.format_dataset_csv(sd))
    out.manifest("search_manifest.json", "search", cfg, inputs,
                 {"configs_evaluated": result.provenance["configs_evaluated"],
                  "failed": result.provenance["failed"]})
    if result.best_model is None:
        print("every search configuration failed", file=sys.stderr)
        return EXIT_DIVERGED
    b = result.best
    log.info("best: %s, %d hidden, validation AUC %.3f", ",".join(b.feature_subset), b.n_hidden,
             b.val_auc)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "extract": cmd_extract, "train": cmd_train, "search": cmd_search}


def _csv_list(text: str) -> list:
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--jobs", type=int, help="worker processes for search")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ihdhrv", description="HRV feature extraction and IHD classifier training.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write synthetic RR files or a feature cohort")
    p.add_argument("--mode", choices=["rr", "features"])
    p.add_argument("--n-subjects", type=int)
    p.add_argument("--duration", type=float, help="seconds per RR recording")
    p.add_argument("--mod-amp", type=float, help="modulation amplitude in ms")
    p.add_argument("--separation", type=float)
    p.add_argument("--n-per-class", type=int)

    p = sub.add_parser("extract", parents=[common], help="RR files -> 24 h HRV feature table")
    p.add_argument("--rr-dir")
    p.add_argument("--meta")

    for name, text in (("train", "train and evaluate one network"),
                       ("search", "grid search over inputs and hidden sizes")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--features", help="feature table CSV")
        p.add_argument("--meta")
        if name == "train":
            p.add_argument("--subset", type=_csv_list, help="comma-separated feature ids")
            p.add_argument("--hidden", type=int)
        else:
            p.add_argument("--candidates", type=_csv_list)
            p.add_argument("--random-sample", type=int)
    return parser


def _overrides(args) -> dict:
    get = lambda name: getattr(args, name, None)  # noqa: E731
    return {
        "out": get("out"), "seed": get("seed"), "jobs": get("jobs"),
        "rr_dir": get("rr_dir"), "meta": get("meta"), "features": get("features"),
        "train": {"feature_subset": get("subset"), "n_hidden": get("hidden")},
        "search": {"candidate_features": get("candidates"), "random_sample": get("random_sample")},
        "synth": {"mode": get("mode"), "n_subjects": get("n_subjects"), "duration_s": get("duration"),
                  "mod_amp_ms": get("mod_amp"), "separation": get("separation"),
                  "n_per_class": get("n_per_class")},
    }


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, _overrides(args))
        return COMMANDS[args.command](cfg)
    except (ConfigError, RRFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, TypeError) as e:
        # knob values rejected by the library constructors
        print(f"error: invalid configuration: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
