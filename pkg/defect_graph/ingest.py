from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError, ParseError, SchemaError, ValidationError

logger = logging.getLogger(__name__)

METRIC_CATEGORIES = ("code", "process", "ownership")
DEPENDENCY_KINDS = ("data", "call")

PROCESS_METRICS = ("COMM", "ADEV", "DDEV", "Added_lines", "Del_lines")
OWNERSHIP_METRICS = (
    "OWN_LINE",
    "OWN_COMMIT",
    "MINOR_COMMIT",
    "MINOR_LINE",
    "MAJOR_COMMIT",
    "MAJOR_LINE",
)
# static code metrics in the usual public tables; synthetic manifests keep the same mix
CODE_METRIC_COUNT = 54

METRICS_FILE = "metrics.csv"
DEPS_FILE = "deps.csv"
OWNERSHIP_FILE = "ownership.csv"
MANIFEST_FILE = "manifest.json"


@dataclass(frozen=True)
class MetricManifest:
    """
    Ordered metric columns of a dataset and the category of each one.

    Attributes:
        names: Metric column names, in file order.
        categories: One of "code", "process", "ownership" per column.
    """
    names: tuple[str, ...]
    categories: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "categories", tuple(self.categories))
        if len(set(self.names)) != len(self.names):
            raise ValidationError("metric names in the manifest must be unique")
        if len(self.categories) != len(self.names):
            raise ValidationError(
                f"manifest has {len(self.names)} names but {len(self.categories)} categories"
            )
        for c in self.categories:
            if c not in METRIC_CATEGORIES:
                raise ValidationError(f"unknown metric category '{c}'")
        for n in self.names:
            if n in ("file", "label"):
                raise ValidationError(f"'{n}' is reserved and cannot be a metric name")

    def __len__(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class ModuleRecord:
    file_id: str
    metrics: tuple[float, ...]
    label: int


@dataclass(frozen=True)
class RawDependencyEdge:
    src: str
    dst: str
    kind: str
    count: int

    def __post_init__(self) -> None:
        if self.kind not in DEPENDENCY_KINDS:
            raise ValidationError(f"unknown dependency kind '{self.kind}'")
        if self.count < 1:
            raise ValidationError(
                f"dependency count must be >= 1, got {self.count} for {self.src}->{self.dst}"
            )


@dataclass(frozen=True)
class OwnershipRecord:
    file_id: str
    developer_id: str

    def __post_init__(self) -> None:
        if not self.developer_id:
            raise ValidationError(f"empty developer id for file '{self.file_id}'")


@dataclass(frozen=True)
class VersionDataset:
    """
    One project version: per-file metrics and labels plus the raw dependency and
    ownership records the graphs are built from.

    Every edge and ownership file id must resolve to a record; this is checked on
    construction so a VersionDataset is always internally consistent.
    """
    project: str
    version: str
    manifest: MetricManifest
    records: tuple[ModuleRecord, ...]
    dep_edges: tuple[RawDependencyEdge, ...] = ()
    ownership: tuple[OwnershipRecord, ...] = ()
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "dep_edges", tuple(self.dep_edges))
        object.__setattr__(self, "ownership", tuple(self.ownership))

        index: dict[str, int] = {}
        width = len(self.manifest)
        for i, r in enumerate(self.records):
            if not r.file_id:
                raise ValidationError(f"record {i} has an empty file id")
            if r.file_id in index:
                raise ValidationError(f"duplicate file id '{r.file_id}'")
            if len(r.metrics) != width:
                raise ValidationError(
                    f"record '{r.file_id}' has {len(r.metrics)} metrics, manifest has {width}"
                )
            if r.label not in (0, 1):
                raise ValidationError(f"record '{r.file_id}' has label {r.label}, expected 0 or 1")
            index[r.file_id] = i
        object.__setattr__(self, "_index", index)

        for e in self.dep_edges:
            for fid in (e.src, e.dst):
                if fid not in index:
                    raise ValidationError(f"dependency endpoint '{fid}' does not match any file")
        for o in self.ownership:
            if o.file_id not in index:
                raise ValidationError(f"ownership file '{o.file_id}' does not match any file")

    @property
    def name(self) -> str:
        return f"{self.project}-{self.version}" if self.version else self.project

    @property
    def file_ids(self) -> tuple[str, ...]:
        return tuple(r.file_id for r in self.records)

    @property
    def defect_rate(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.label for r in self.records) / len(self.records)

    def index_of(self, file_id: str) -> int:
        try:
            return self._index[file_id]
        except KeyError:
            raise ValidationError(f"unknown file id '{file_id}'") from None

    def feature_matrix(self) -> np.ndarray:
        if not self.records:
            return np.zeros((0, len(self.manifest)), dtype=np.float64)
        return np.array([r.metrics for r in self.records], dtype=np.float64)

    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)


def _read_table(path: str, required: Sequence[str]) -> pd.DataFrame:
    """Read a CSV as strings and check the required header columns are present."""
    if not os.path.isfile(path):
        raise ValidationError(f"file not found: {path}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        return pd.DataFrame({c: pd.Series(dtype=str) for c in required})
    df.columns = [c.strip() for c in df.columns]
    for col in required:
        if col not in df.columns:
            raise SchemaError(col, path)
    return df


def _parse_float(cell: str, column: str, row: int) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"non-numeric value '{cell}' in column '{column}'", row) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value '{cell}' in column '{column}'", row)
    return value


def _parse_int(cell: str, column: str, row: int) -> int:
    value = _parse_float(cell, column, row)
    if value != int(value):
        raise ParseError(f"expected an integer in column '{column}', got '{cell}'", row)
    return int(value)


def parse_metrics(path: str, manifest: MetricManifest) -> tuple[ModuleRecord, ...]:
    '''
    Parse a metrics table into module records.

    The header must hold `file`, `label` and every manifest metric name. Extra
    columns are ignored. Rows keep file order.

    Args:
        path (str): Path to `metrics.csv`.
        manifest (MetricManifest): Metric columns to read, in manifest order.

    Returns:
        tuple[ModuleRecord, ...]: One record per data row.

    Raises:
        SchemaError: A required column is missing.
        ParseError: A metric or label cell is not numeric (row index is 0-based).
        ValidationError: Duplicate file id or a label outside {0, 1}.
    '''
    df = _read_table(path, ("file", "label", *manifest.names))

    records: list[ModuleRecord] = []
    seen: set[str] = set()
    files = df["file"].tolist()
    labels = df["label"].tolist()
    columns = [df[n].tolist() for n in manifest.names]

    for i, fid in enumerate(files):
        fid = fid.strip()
        if not fid:
            raise ParseError("empty file id", i)
        if fid in seen:
            raise ValidationError(f"duplicate file id '{fid}' (row {i})")
        seen.add(fid)

        label = _parse_int(labels[i], "label", i)
        if label not in (0, 1):
            raise ValidationError(f"label must be 0 or 1, got {label} (row {i})")

        metrics = tuple(
            _parse_float(col[i], name, i) for name, col in zip(manifest.names, columns)
        )
        records.append(ModuleRecord(file_id=fid, metrics=metrics, label=label))

    return tuple(records)


def parse_dependencies(path: str) -> tuple[RawDependencyEdge, ...]:
    '''
    Parse a dependency export with header `src,dst,kind,count`.

    Rows are kept as given; repeated (src, dst, kind) rows are not merged here,
    `build_cdg` sums them.
    '''
    df = _read_table(path, ("src", "dst", "kind", "count"))

    edges: list[RawDependencyEdge] = []
    for i, (src, dst, kind, count) in enumerate(
        zip(df["src"], df["dst"], df["kind"], df["count"])
    ):
        kind = kind.strip()
        if kind not in DEPENDENCY_KINDS:
            raise ValidationError(f"unknown dependency kind '{kind}' (row {i})")
        n = _parse_int(count, "count", i)
        if n <= 0:
            raise ValidationError(f"dependency count must be positive, got {n} (row {i})")
        edges.append(RawDependencyEdge(src=src.strip(), dst=dst.strip(), kind=kind, count=n))
    return tuple(edges)


def parse_ownership(path: str) -> tuple[OwnershipRecord, ...]:
    '''Parse `file,developer` rows, dropping repeated pairs (first occurrence wins).'''
    df = _read_table(path, ("file", "developer"))

    out: list[OwnershipRecord] = []
    seen: set[tuple[str, str]] = set()
    for i, (fid, dev) in enumerate(zip(df["file"], df["developer"])):
        fid, dev = fid.strip(), dev.strip()
        if not dev:
            raise ValidationError(f"empty developer id for file '{fid}' (row {i})")
        if (fid, dev) in seen:
            continue
        seen.add((fid, dev))
        out.append(OwnershipRecord(file_id=fid, developer_id=dev))
    return tuple(out)


def read_manifest(path: str) -> tuple[MetricManifest, dict]:
    """Read `manifest.json`. Returns the manifest and any extra top-level fields."""
    if not os.path.isfile(path):
        raise ValidationError(f"file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON in {path}: {e}") from None
    for key in ("names", "categories"):
        if key not in doc:
            raise SchemaError(key, path)
    manifest = MetricManifest(names=tuple(doc["names"]), categories=tuple(doc["categories"]))
    extra = {k: v for k, v in doc.items() if k not in ("names", "categories")}
    return manifest, extra


def infer_manifest(columns: Iterable[str]) -> MetricManifest:
    """Build a manifest from metric column names using the known process/ownership sets."""
    names = tuple(columns)
    cats = []
    for n in names:
        if n in PROCESS_METRICS:
            cats.append("process")
        elif n in OWNERSHIP_METRICS:
            cats.append("ownership")
        else:
            cats.append("code")
    return MetricManifest(names=names, categories=tuple(cats))


def infer_manifest_from_metrics(path: str) -> MetricManifest:
    """Manifest for a metrics table without a manifest.json: every column but file and label."""
    header = _read_table(path, ("file", "label")).columns
    return infer_manifest(c for c in header if c not in ("file", "label"))


def write_manifest(manifest: MetricManifest, path: str, **extra) -> None:
    doc = {"names": list(manifest.names), "categories": list(manifest.categories)}
    doc.update(extra)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def write_metrics(records: Sequence[ModuleRecord], manifest: MetricManifest, path: str) -> None:
    # repr() of a float is the shortest string that parses back to the same value
    rows = [
        [r.file_id, str(r.label), *(repr(float(x)) for x in r.metrics)] for r in records
    ]
    df = pd.DataFrame(rows, columns=["file", "label", *manifest.names])
    df.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")


def write_dependencies(edges: Sequence[RawDependencyEdge], path: str) -> None:
    df = pd.DataFrame(
        [[e.src, e.dst, e.kind, str(e.count)] for e in edges],
        columns=["src", "dst", "kind", "count"],
    )
    df.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")


def write_ownership(ownership: Sequence[OwnershipRecord], path: str) -> None:
    df = pd.DataFrame(
        [[o.file_id, o.developer_id] for o in ownership], columns=["file", "developer"]
    )
    df.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")


def _split_dir_name(path: str) -> tuple[str, str]:
    base = os.path.basename(os.path.normpath(path))
    if "-" in base:
        project, version = base.rsplit("-", 1)
        return project, version
    return base, ""


def load_dataset_dir(path: str) -> VersionDataset:
    '''
    Load a dataset directory holding metrics.csv, deps.csv, ownership.csv and
    manifest.json.

    Project and version come from the manifest's optional `project`/`version`
    fields, otherwise from a directory name of the form `<project>-<version>`.
    '''
    if not os.path.isdir(path):
        raise ValidationError(f"dataset directory not found: {path}")
    manifest, extra = read_manifest(os.path.join(path, MANIFEST_FILE))
    project, version = _split_dir_name(path)
    project = str(extra.get("project", project))
    version = str(extra.get("version", version))

    return VersionDataset(
        project=project,
        version=version,
        manifest=manifest,
        records=parse_metrics(os.path.join(path, METRICS_FILE), manifest),
        dep_edges=parse_dependencies(os.path.join(path, DEPS_FILE)),
        ownership=parse_ownership(os.path.join(path, OWNERSHIP_FILE)),
    )


def write_dataset_dir(dataset: VersionDataset, path: str) -> None:
    os.makedirs(path, exist_ok=True)
    write_manifest(
        dataset.manifest,
        os.path.join(path, MANIFEST_FILE),
        project=dataset.project,
        version=dataset.version,
    )
    write_metrics(dataset.records, dataset.manifest, os.path.join(path, METRICS_FILE))
    write_dependencies(dataset.dep_edges, os.path.join(path, DEPS_FILE))
    write_ownership(dataset.ownership, os.path.join(path, OWNERSHIP_FILE))


def normalize_metrics(dataset: VersionDataset) -> VersionDataset:
    '''
    Min-max scale every metric column to [0, 1] within one version.

    Constant columns become all zeros. Labels, ids, edges and ownership are
    carried over unchanged.
    '''
    if not dataset.records:
        raise ValidationError("cannot normalize an empty dataset")

    X = dataset.feature_matrix()
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    Xn = np.where(span > 0, (X - lo) / safe, 0.0)
    # exact endpoints regardless of rounding in the division
    Xn = np.clip(Xn, 0.0, 1.0)

    records = tuple(
        replace(r, metrics=tuple(float(x) for x in row)) for r, row in zip(dataset.records, Xn)
    )
    return replace(dataset, records=records)


@dataclass
class SyntheticConfig:
    """
    Parameters of the planted-partition dataset generator.

    Attributes:
        n_nodes: Number of files (>= 4).
        defect_rate: Fraction of defective files, strictly between 0 and 1.
        homophily: Probability that a dependency edge or a developer assignment
            stays within the file's own label class.
        n_developers: Size of the developer pool (>= 2).
        mean_degree: Expected dependency rows per file.
        n_metrics: Width of the metric vectors.
        separation: Mean shift of defective metric vectors, in noise standard deviations.
        devs_per_file: Mean number of developers per file (at least one each).
        shared_signal: Fraction of files whose links follow `homophily` in both
            views. The rest are split evenly between files whose label shows
            only in their dependency rows and files whose label shows only in
            their developers; their other view is drawn without regard to labels.
    """
    n_nodes: int = 100
    defect_rate: float = 0.2
    homophily: float = 0.8
    n_developers: int = 10
    mean_degree: float = 3.0
    n_metrics: int = 8
    separation: float = 1.0
    devs_per_file: float = 1.5
    shared_signal: float = 1.0
    project: str = "synthetic"
    version: str = "1.0"

    def __post_init__(self) -> None:
        if self.n_nodes < 4:
            raise ConfigError(f"n_nodes must be >= 4, got {self.n_nodes}")
        if not 0.0 < self.defect_rate < 1.0:
            raise ConfigError(f"defect_rate must be in (0, 1), got {self.defect_rate}")
        n_def = int(round(self.defect_rate * self.n_nodes))
        if n_def < 1 or n_def > self.n_nodes - 1:
            raise ConfigError(
                f"defect_rate {self.defect_rate} with n_nodes {self.n_nodes} "
                "leaves a label class empty"
            )
        if not 0.0 <= self.homophily <= 1.0:
            raise ConfigError(f"homophily must be in [0, 1], got {self.homophily}")
        if self.n_developers < 2:
            raise ConfigError(f"n_developers must be >= 2, got {self.n_developers}")
        if self.mean_degree < 0:
            raise ConfigError(f"mean_degree must be >= 0, got {self.mean_degree}")
        if self.n_metrics < 1:
            raise ConfigError(f"n_metrics must be >= 1, got {self.n_metrics}")
        if self.devs_per_file < 1:
            raise ConfigError(f"devs_per_file must be >= 1, got {self.devs_per_file}")
        if not 0.0 <= self.shared_signal <= 1.0:
            raise ConfigError(f"shared_signal must be in [0, 1], got {self.shared_signal}")


def _synthetic_manifest(n_metrics: int) -> MetricManifest:
    total = CODE_METRIC_COUNT + len(PROCESS_METRICS) + len(OWNERSHIP_METRICS)
    n_code = max(1, int(round(n_metrics * CODE_METRIC_COUNT / total)))
    n_proc = int(round(n_metrics * len(PROCESS_METRICS) / total))
    cats = []
    for j in range(n_metrics):
        if j < n_code:
            cats.append("code")
        elif j < n_code + n_proc:
            cats.append("process")
        else:
            cats.append("ownership")
    names = tuple(f"m{j:02d}" for j in range(n_metrics))
    return MetricManifest(names=names, categories=tuple(cats))


def generate_synthetic(config: SyntheticConfig, seed: int) -> VersionDataset:
    '''
    Generate a planted-partition VersionDataset.

    Labels are planted at `defect_rate`. Each dependency row and each developer
    assignment stays inside the file's label class with probability `homophily`
    and crosses to the other class otherwise, so `homophily=1` only ever links
    same-label files. With `shared_signal < 1` some files follow that rule in
    only one of the two views. Metric vectors are Gaussian with a mean shifted by
    `separation` for defective files. Everything is drawn from one
    `np.random.default_rng(seed)` stream in a fixed order.
    '''
    cfg = config
    rng = np.random.default_rng(seed)
    n = cfg.n_nodes
    n_def = int(round(cfg.defect_rate * n))

    labels = np.zeros(n, dtype=np.int64)
    labels[rng.permutation(n)[:n_def]] = 1
    groups = [np.flatnonzero(labels == 0), np.flatnonzero(labels == 1)]
    file_ids = [f"src/module_{i:04d}.java" for i in range(n)]

    # which view carries each file's label; drawn only when some files carry it in one view
    dep_signal = own_signal = None
    if cfg.shared_signal < 1.0:
        u = rng.random(n)
        cut = cfg.shared_signal + (1.0 - cfg.shared_signal) / 2.0
        dep_signal = u < cut
        own_signal = (u < cfg.shared_signal) | (u >= cut)

    # dependency rows
    n_rows = int(round(cfg.mean_degree * n))
    big_enough = np.concatenate([g for g in groups if g.size >= 2])
    deps: list[RawDependencyEdge] = []
    for _ in range(n_rows):
        if dep_signal is not None:
            src = int(rng.integers(n))
            if not dep_signal[src]:
                pool = np.delete(np.arange(n), src)
            elif rng.random() < cfg.homophily and groups[labels[src]].size >= 2:
                pool = groups[labels[src]]
                pool = pool[pool != src]
            else:
                pool = groups[1 - labels[src]]
        elif rng.random() < cfg.homophily:
            src = int(big_enough[rng.integers(big_enough.size)])
            pool = groups[labels[src]]
            pool = pool[pool != src]
        else:
            src = int(rng.integers(n))
            pool = groups[1 - labels[src]]
        dst = int(pool[rng.integers(pool.size)])
        kind = DEPENDENCY_KINDS[int(rng.integers(2))]
        count = 1 + int(rng.poisson(2.0))
        deps.append(RawDependencyEdge(file_ids[src], file_ids[dst], kind, count))

    # developers get a home class; files mostly draw from their own class's pool
    n_dev_def = min(cfg.n_developers - 1, max(1, int(round(cfg.defect_rate * cfg.n_developers))))
    dev_pools = [
        [f"dev{d:03d}" for d in range(n_dev_def, cfg.n_developers)],
        [f"dev{d:03d}" for d in range(n_dev_def)],
    ]
    everyone = dev_pools[1] + dev_pools[0]
    ownership: list[OwnershipRecord] = []
    for i in range(n):
        k = 1 + int(rng.poisson(cfg.devs_per_file - 1.0))
        chosen: list[str] = []
        for _ in range(k):
            if own_signal is not None and not own_signal[i]:
                pool = everyone
            else:
                same = rng.random() < cfg.homophily
                pool = dev_pools[labels[i]] if same else dev_pools[1 - labels[i]]
            dev = pool[int(rng.integers(len(pool)))]
            if dev not in chosen:
                chosen.append(dev)
        ownership.extend(OwnershipRecord(file_ids[i], d) for d in chosen)

    X = rng.normal(0.0, 1.0, size=(n, cfg.n_metrics)) + cfg.separation * labels[:, None]

    manifest = _synthetic_manifest(cfg.n_metrics)
    records = tuple(
        ModuleRecord(file_id=file_ids[i], metrics=tuple(float(x) for x in X[i]), label=int(labels[i]))
        for i in range(n)
    )
    return VersionDataset(
        project=cfg.project,
        version=cfg.version,
        manifest=manifest,
        records=records,
        dep_edges=tuple(deps),
        ownership=tuple(ownership),
    )
