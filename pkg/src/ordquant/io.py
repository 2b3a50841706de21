"""File formats: feature/label CSVs, schema and run-config INI files,
comment JSONL, and quantifier persistence."""
from __future__ import annotations

import configparser
import csv
import datetime as dt
import json
import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from ordquant.classifier import CLASS_WEIGHTINGS, HyperGrid, ProbClassifier
from ordquant.data import Dataset, FeatureSchema
from ordquant.errors import (
    ConfigError,
    ConfigNotFoundError,
    IngestionError,
    SchemaMismatchError,
)
from ordquant.labelling import D_HIGH, D_MODERATE, DEFAULT_INTERVENTION, MIN_POST_COMMENTS, Window
from ordquant.protocol import ProtocolConfig
from ordquant.quantifiers import KINDS, QuantifierModel


def _fmt(x: float) -> str:
    return repr(float(x))


# --- features, labels -------------------------------------------------------

def load_feature_matrix(path) -> tuple[np.ndarray, list[str], list[str]]:
    """Read ``id,<col_0>,...`` rows. Returns ``(matrix, ids, column_names)``."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"feature file not found: {path}")
    rows, ids, seen = [], [], set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "id":
            raise IngestionError(f"{path}: line 1: header must start with 'id'")
        width = len(header) - 1
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != width + 1:
                raise IngestionError(
                    f"{path}: line {lineno}: expected {width} values, found {len(rec) - 1}"
                )
            uid = rec[0]
            if uid in seen:
                raise IngestionError(f"{path}: line {lineno}: duplicate id {uid!r}")
            seen.add(uid)
            try:
                values = [float(v) for v in rec[1:]]
            except ValueError as exc:
                raise IngestionError(f"{path}: line {lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in values):
                raise IngestionError(f"{path}: line {lineno}: non-finite feature value")
            ids.append(uid)
            rows.append(values)
    X = np.array(rows, dtype=np.float64).reshape(len(rows), width)
    return X, ids, header[1:]


def save_feature_matrix(path, X, ids, columns=None) -> None:
    X = np.asarray(X, dtype=np.float64)
    columns = columns or [f"col_{j}" for j in range(X.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *columns])
        for uid, row in zip(ids, X):
            w.writerow([uid, *(_fmt(v) for v in row)])


def load_labels(path) -> dict[str, int]:
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"label file not found: {path}")
    labels: dict[str, int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id", "label"]:
            raise IngestionError(f"{path}: line 1: header must be 'id,label'")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 2:
                raise IngestionError(f"{path}: line {lineno}: expected 'id,label'")
            if rec[0] in labels:
                raise IngestionError(f"{path}: line {lineno}: duplicate id {rec[0]!r}")
            try:
                labels[rec[0]] = int(rec[1])
            except ValueError:
                raise IngestionError(f"{path}: line {lineno}: label {rec[1]!r} is not an integer") from None
    return labels


def save_labels(path, ids, labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"])
        for uid, y in zip(ids, labels):
            w.writerow([uid, int(y)])


def load_dataset(features_path, labels_path, schema_path, n_classes: int = 5) -> Dataset:
    """Join features and labels on id, keeping feature-file row order.

    Feature rows without a label are dropped; labels for unknown ids are an
    error.
    """
    X, ids, _ = load_feature_matrix(features_path)
    labels = load_labels(labels_path)
    schema = load_schema(schema_path)
    if schema.n_columns != X.shape[1]:
        raise SchemaMismatchError(
            f"schema declares {schema.n_columns} columns but {features_path} has {X.shape[1]}"
        )
    known = set(ids)
    unknown = [u for u in labels if u not in known]
    if unknown:
        raise IngestionError(f"{labels_path}: {len(unknown)} label ids have no features, e.g. {unknown[0]!r}")
    rows = [i for i, u in enumerate(ids) if u in labels]
    return Dataset(X[rows], [labels[ids[i]] for i in rows], schema, [ids[i] for i in rows], n_classes)


def save_dataset(dataset: Dataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_feature_matrix(directory / "features.csv", dataset.features, dataset.ids)
    save_labels(directory / "labels.csv", dataset.ids, dataset.labels)
    save_schema(dataset.schema, directory / "schema.ini")


# --- schema -----------------------------------------------------------------

def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(
        interpolation=None, strict=True, default_section="__defaults__", inline_comment_prefixes=(";",)
    )
    cp.optionxform = str
    return cp


def load_schema(path) -> FeatureSchema:
    """Parse an INI schema: one section per group, ``SUBGROUP = n_columns`` lines."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"schema file not found: {path}")
    cp = _parser()
    try:
        cp.read_string(path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise IngestionError(f"{path}: {exc}") from None
    groups = []
    for section in cp.sections():
        subs = []
        for name, value in cp.items(section):
            try:
                subs.append((name, int(value)))
            except ValueError:
                raise IngestionError(f"{path}: [{section}] {name}: column count {value!r} is not an integer") from None
        groups.append((section, tuple(subs)))
    return FeatureSchema(tuple(groups))


def save_schema(schema: FeatureSchema, path) -> None:
    lines = []
    for gname, subs in schema.groups:
        lines.append(f"[{gname}]")
        lines += [f"{s} = {c}" for s, c in subs]
        lines.append("")
    Path(path).write_text("\n".join(lines))


def reference_schema() -> FeatureSchema:
    """The 9-group / 69-subgroup / 753-column feature layout."""
    text = resources.files("ordquant").joinpath("resources/reference_schema.ini").read_text()
    cp = _parser()
    cp.read_string(text)
    return FeatureSchema(tuple(
        (s, tuple((k, int(v)) for k, v in cp.items(s))) for s in cp.sections()
    ))


# --- comments ---------------------------------------------------------------

def read_comments_jsonl(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"comment file not found: {path}")
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(f"{path}: line {lineno}: {exc.msg}") from None
            missing = {"user_id", "timestamp", "community_id", "toxicity"} - rec.keys()
            if missing:
                raise IngestionError(f"{path}: line {lineno}: missing fields {sorted(missing)}")
            out.append(rec)
    return out


def write_comments_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# --- quantifier persistence ---------------------------------------------------

def quantifier_to_dict(model: QuantifierModel) -> dict:
    out = {
        "kind": model.kind,
        "train_prior": model.train_prior.tolist(),
        "correction": None if model.correction is None else model.correction.tolist(),
        "max_iter": model.max_iter,
        "eps": model.eps,
        "classifier": None,
    }
    c = model.classifier
    if c is not None:
        out["classifier"] = {
            "weights": c.weights.tolist(),
            "mean": c.mean.tolist(),
            "scale": c.scale.tolist(),
            "present": c.present.tolist(),
            "reg": c.reg,
            "class_weighting": c.class_weighting,
        }
    return out


def quantifier_from_dict(d: dict) -> QuantifierModel:
    c = d.get("classifier")
    clf = None
    if c is not None:
        clf = ProbClassifier(
            np.array(c["weights"], dtype=np.float64),
            np.array(c["mean"], dtype=np.float64),
            np.array(c["scale"], dtype=np.float64),
            np.array(c["present"], dtype=bool),
            float(c["reg"]),
            c["class_weighting"],
        )
    corr = d.get("correction")
    return QuantifierModel(
        d["kind"],
        np.array(d["train_prior"], dtype=np.float64),
        clf,
        None if corr is None else np.array(corr, dtype=np.float64),
        int(d["max_iter"]),
        float(d["eps"]),
    )


def save_quantifier(model: QuantifierModel, path) -> None:
    Path(path).write_text(json.dumps(quantifier_to_dict(model), indent=1) + "\n")


def load_quantifier(path) -> QuantifierModel:
    return quantifier_from_dict(json.loads(Path(path).read_text()))


# --- run configuration --------------------------------------------------------

TASKS = ("activity", "toxicity", "diversity", "custom")
PATH_KEYS = ("features", "labels", "schema", "comments", "unlabelled")


@dataclass
class RunConfig:
    task: str = "custom"
    quantifier: str = "emq"
    seed: int = 0
    out: Path = Path("out")
    threads: int = 1
    paths: dict = field(default_factory=dict)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    d_moderate: float = D_MODERATE
    d_high: float = D_HIGH
    min_post_comments: int = MIN_POST_COMMENTS
    intervention: dt.date = DEFAULT_INTERVENTION
    window_months: int = 7
    initial: str = "groups"  # or "all"
    margin: float = 0.0
    synth: dict = field(default_factory=dict)

    def validate(self) -> RunConfig:
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.quantifier not in KINDS:
            raise ConfigError(f"unknown quantifier {self.quantifier!r}; expected one of {KINDS}")
        if not 0 < self.d_moderate < self.d_high:
            raise ConfigError("thresholds must satisfy 0 < d_moderate < d_high")
        if self.initial not in ("groups", "all"):
            raise ConfigError("selection.initial must be 'groups' or 'all'")
        for key, p in self.paths.items():
            if key not in PATH_KEYS:
                raise ConfigError(f"unknown path key {key!r}")
            if not Path(p).exists():
                raise ConfigError(f"path for {key!r} does not exist: {p}")
        return self

    @property
    def thresholds(self) -> tuple[float, float]:
        return (self.d_moderate, self.d_high)

    @property
    def window(self) -> Window:
        return Window.around(self.intervention, self.window_months)

    def resolved_protocol(self) -> ProtocolConfig:
        return replace(self.protocol, seed=self.seed, threads=self.threads)

    def require(self, *keys: str) -> list[Path]:
        missing = [k for k in keys if k not in self.paths]
        if missing:
            raise ConfigError(f"missing path(s) in config: {', '.join(missing)}")
        return [Path(self.paths[k]) for k in keys]

    def to_ini(self) -> str:
        cp = _parser()
        cp["run"] = {
            "task": self.task, "quantifier": self.quantifier, "seed": str(self.seed),
        }
        cp["paths"] = {k: str(Path(v).resolve()) for k, v in sorted(self.paths.items())}
        p = self.protocol
        proto = {f.name: str(getattr(p, f.name)) for f in fields(ProtocolConfig)
                 if f.name not in ("grid", "seed", "threads")}
        proto["grid_regs"] = ", ".join(repr(float(r)) for r in p.grid.regs)
        proto["grid_weightings"] = ", ".join(p.grid.class_weightings)
        cp["protocol"] = proto
        cp["labelling"] = {
            "d_moderate": repr(self.d_moderate), "d_high": repr(self.d_high),
            "min_post_comments": str(self.min_post_comments),
            "intervention": self.intervention.isoformat(),
            "window_months": str(self.window_months),
        }
        cp["selection"] = {"initial": self.initial, "margin": repr(self.margin)}
        if self.synth:
            cp["synth"] = {k: str(v) for k, v in self.synth.items()}
        lines = []
        for section in cp.sections():
            lines.append(f"[{section}]")
            lines += [f"{k} = {v}" for k, v in cp.items(section)]
            lines.append("")
        return "\n".join(lines)


_PROTO_INT = ("repetitions", "train_pool_size", "batch_size", "batch_count", "app_samples",
              "app_sample_size", "val_samples", "val_sample_size", "cv_folds")
_PROTO_FLOAT = ("val_fraction", "max_skip_fraction")


def load_config(path=None, **overrides) -> RunConfig:
    """Read an INI run config; keyword overrides (None values ignored) win.

    Relative paths resolve against the config file's directory.
    """
    cfg = RunConfig()
    proto: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigNotFoundError(f"config file not found: {path}")
        cp = _parser()
        try:
            cp.read_string(path.read_text(), source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        base = path.parent
        try:
            if cp.has_section("run"):
                run = cp["run"]
                cfg.task = run.get("task", cfg.task)
                cfg.quantifier = run.get("quantifier", cfg.quantifier)
                cfg.seed = run.getint("seed", cfg.seed)
                if "out" in run:
                    cfg.out = base / run["out"]
                cfg.threads = run.getint("threads", cfg.threads)
            if cp.has_section("paths"):
                cfg.paths = {k: str(base / v) for k, v in cp.items("paths")}
            if cp.has_section("protocol"):
                sec = cp["protocol"]
                for key in _PROTO_INT:
                    if key in sec:
                        proto[key] = sec.getint(key)
                for key in _PROTO_FLOAT:
                    if key in sec:
                        proto[key] = sec.getfloat(key)
                if "grid_regs" in sec or "grid_weightings" in sec:
                    regs = tuple(float(v) for v in sec.get("grid_regs", "").split(",") if v.strip()) \
                        or HyperGrid().regs
                    cws = tuple(v.strip() for v in sec.get("grid_weightings", "").split(",") if v.strip()) \
                        or CLASS_WEIGHTINGS
                    proto["grid"] = HyperGrid(regs, cws)
                if "train_pool_size" not in sec and ("batch_size" in sec or "batch_count" in sec):
                    proto["train_pool_size"] = proto.get("batch_size", 500) * proto.get("batch_count", 16)
            if cp.has_section("labelling"):
                sec = cp["labelling"]
                cfg.d_moderate = sec.getfloat("d_moderate", cfg.d_moderate)
                cfg.d_high = sec.getfloat("d_high", cfg.d_high)
                cfg.min_post_comments = sec.getint("min_post_comments", cfg.min_post_comments)
                if "intervention" in sec:
                    cfg.intervention = dt.date.fromisoformat(sec["intervention"])
                cfg.window_months = sec.getint("window_months", cfg.window_months)
            if cp.has_section("selection"):
                cfg.initial = cp["selection"].get("initial", cfg.initial)
                cfg.margin = cp["selection"].getfloat("margin", cfg.margin)
            if cp.has_section("synth"):
                cfg.synth = dict(cp.items("synth"))
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    if proto:
        try:
            cfg.protocol = ProtocolConfig(**proto)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "out":
            value = Path(value)
        setattr(cfg, key, value)
    return cfg.validate()
