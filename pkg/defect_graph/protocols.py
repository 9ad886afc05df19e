'''
Within-project (WPDP) and cross-project (CPDP) experiment campaigns.

A campaign draws one seed per repetition from the caller's generator up front,
so every repetition can be replayed from the report alone and repetitions can
run in any order (or in parallel) without changing the result.
'''

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import (
    ExperimentInterrupted,
    RepetitionFailed,
    SchemaError,
    ValidationError,
)
from .graph import DependencyGraph, GraphView, build_view
from .ingest import VersionDataset, normalize_metrics
from .metrics import MEASURES, MetricReport, confusion_and_threshold_metrics
from .model import ModelConfig, embed, forward, train
from .stats import StatTestResult, paired_test
from .worker import ProgressFn, RepetitionJob, RepetitionWorker

logger = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = 1
PROTOCOLS = ("WPDP", "CPDP")
WPDP_FRACTIONS = (0.7, 0.15, 0.15)
CPDP_FRACTIONS = (0.8, 0.2)
MAX_REDRAWS = 100


@dataclass
class RunRecord:
    '''
    Outcome of one repetition.

    `predictions` and `embeddings` are only filled when a dump was requested
    and are not part of the report JSON.
    '''
    index: int
    seed: int
    source: str
    target: str
    metrics: MetricReport
    selected_epoch: int = 0
    n_synthetic: int = 0
    redraws: int = 0
    val_score: float = math.nan
    predictions: Optional[pd.DataFrame] = field(default=None, repr=False, compare=False)
    embeddings: Optional[pd.DataFrame] = field(default=None, repr=False, compare=False)
    synthetic_origin: Optional[list] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "seed": self.seed,
            "source": self.source,
            "target": self.target,
            "metrics": self.metrics.to_dict(),
            "selected_epoch": self.selected_epoch,
            "n_synthetic": self.n_synthetic,
            "redraws": self.redraws,
            "val_score": None if math.isnan(self.val_score) else self.val_score,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> RunRecord:
        return cls(
            index=int(d["index"]),
            seed=int(d["seed"]),
            source=str(d["source"]),
            target=str(d["target"]),
            metrics=MetricReport.from_dict(d["metrics"]),
            selected_epoch=int(d.get("selected_epoch", 0)),
            n_synthetic=int(d.get("n_synthetic", 0)),
            redraws=int(d.get("redraws", 0)),
            val_score=math.nan if d.get("val_score") is None else float(d["val_score"]),
        )


@dataclass
class ExperimentReport:
    '''
    Every repetition of one campaign plus what is needed to rerun it.

    Attributes:
        protocol: "WPDP" or "CPDP".
        dataset: Name of the evaluated (target) version.
        method: Label used in comparison and summary tables.
        view: Graph view the model used.
        config: Fully resolved configuration.
        seed: Master seed of the campaign.
        runs: Repetitions ordered by index.
        partial: True when the campaign stopped early.
        leakage: True when the training data overlaps the evaluated data.
    '''
    protocol: str
    dataset: str
    method: str
    view: str = ""
    config: dict = field(default_factory=dict)
    seed: Optional[int] = None
    runs: list = field(default_factory=list)
    partial: bool = False
    leakage: bool = False
    created_at: str = ""

    def __post_init__(self) -> None:
        self.protocol = str(self.protocol).upper()
        if self.protocol not in PROTOCOLS:
            raise ValidationError(f"unknown protocol '{self.protocol}' (expected wpdp or cpdp)")
        if not self.created_at:
            self.created_at = datetime.now(timezone.utc).isoformat(timespec="seconds")

    @property
    def seeds(self) -> list[int]:
        return [r.seed for r in self.runs]

    def values(self, measure: str) -> np.ndarray:
        return np.array([r.metrics.measure(measure) for r in self.runs], dtype=np.float64)

    def median(self, measure: str) -> float:
        vals = self.values(measure)
        if vals.size == 0 or np.all(np.isnan(vals)):
            return math.nan
        return float(np.nanmedian(vals))

    @property
    def medians(self) -> dict[str, float]:
        return {m: self.median(m) for m in MEASURES}

    def to_dict(self) -> dict:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "protocol": self.protocol,
            "dataset": self.dataset,
            "method": self.method,
            "view": self.view,
            "config": self.config,
            "seed": self.seed,
            "seeds": self.seeds,
            "runs": [r.to_dict() for r in self.runs],
            "medians": {k: (None if math.isnan(v) else v) for k, v in self.medians.items()},
            "partial": self.partial,
            "leakage": self.leakage,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> ExperimentReport:
        for key in ("protocol", "dataset", "method", "runs"):
            if key not in d:
                raise SchemaError(key, "report")
        return cls(
            protocol=d["protocol"],
            dataset=d["dataset"],
            method=d["method"],
            view=d.get("view", ""),
            config=dict(d.get("config", {})),
            seed=d.get("seed"),
            runs=[RunRecord.from_dict(r) for r in d["runs"]],
            partial=bool(d.get("partial", False)),
            leakage=bool(d.get("leakage", False)),
            created_at=d.get("created_at", ""),
        )

    def write_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def read_json(cls, path: str) -> ExperimentReport:
        if not os.path.isfile(path):
            raise ValidationError(f"file not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path} is not valid JSON: {e}") from None
        return cls.from_dict(data)


def draw_seeds(rng: np.random.Generator, reps: int) -> list[int]:
    return [int(s) for s in rng.integers(0, 2 ** 31 - 1, size=reps)]


def stratified_split(
    labels: np.ndarray,
    fractions: Sequence[float],
    rng: np.random.Generator,
) -> list[np.ndarray]:
    '''
    Random per-class split of the nodes into len(fractions) disjoint parts.

    Each class is shuffled and cut at round(cumulative fraction * class size),
    so every part keeps the class ratio as closely as the counts allow.

    Returns:
        One boolean mask per fraction.
    '''
    labels = np.asarray(labels)
    fractions = np.asarray(fractions, dtype=np.float64)
    if fractions.size == 0 or np.any(fractions < 0) or not math.isclose(fractions.sum(), 1.0):
        raise ValidationError(f"split fractions must be non-negative and sum to 1, got {fractions.tolist()}")
    masks = [np.zeros(labels.size, dtype=bool) for _ in fractions]
    cum = np.cumsum(fractions)
    for cls in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        cuts = [int(math.floor(c * idx.size + 0.5)) for c in cum]
        cuts[-1] = idx.size
        start = 0
        for mask, stop in zip(masks, cuts):
            mask[idx[start:stop]] = True
            start = stop
    return masks


def _both_classes(labels: np.ndarray) -> bool:
    return np.unique(labels).size == 2


def _selected_val_score(history) -> float:
    if not history.val_metric or history.val_metric_name != "auc":
        return math.nan
    return float(history.val_metric[history.selected_epoch - 1])


def _prediction_frame(ids: Sequence[str], probs: np.ndarray, labels: np.ndarray) -> pd.DataFrame:
    return pd.DataFrame({"file": list(ids), "prob_defective": probs, "label": labels})


def _embedding_frame(ids: Sequence[str], labels: np.ndarray, h: np.ndarray) -> pd.DataFrame:
    df = pd.DataFrame(h, columns=[f"h{i}" for i in range(h.shape[1])])
    df.insert(0, "label", labels)
    df.insert(0, "file", list(ids))
    return df


@dataclass(frozen=True)
class _Prepared:
    """Normalized features and graph of one dataset version."""
    name: str
    graph: DependencyGraph
    X: np.ndarray
    labels: np.ndarray


def prepare(dataset: VersionDataset, view: GraphView | str, sum_normalized: bool = False) -> _Prepared:
    normalized = normalize_metrics(dataset)
    graph = build_view(normalized, view, normalize=True, sum_normalized=sum_normalized)
    return _Prepared(dataset.name, graph, normalized.feature_matrix(), normalized.labels())


def _wpdp_repetition(
    data: _Prepared,
    config: ModelConfig,
    fractions: tuple,
    index: int,
    seed: int,
    dumps: tuple[bool, bool],
) -> RunRecord:
    rng = np.random.default_rng(seed)
    redraws = 0
    while True:
        train_mask, val_mask, test_mask = stratified_split(data.labels, fractions, rng)
        if _both_classes(data.labels[train_mask]):
            break
        redraws += 1
        logger.info("rep %d: single-class training split, redrawing", index)
        if redraws >= MAX_REDRAWS:
            raise ValidationError(f"could not draw a two-class training split in {MAX_REDRAWS} tries")

    params, history = train(data.graph, data.X, data.labels, train_mask, val_mask, config, rng, test_mask)
    aug = history.augmented
    n = data.graph.n_nodes
    probs = forward(aug.graph, aug.features, params, config)[:n, 1]
    test = np.flatnonzero(test_mask)
    record = RunRecord(
        index=index,
        seed=seed,
        source=data.name,
        target=data.name,
        metrics=confusion_and_threshold_metrics(probs[test], data.labels[test]),
        selected_epoch=history.selected_epoch,
        n_synthetic=aug.n_synthetic,
        redraws=redraws,
        val_score=_selected_val_score(history),
    )
    keep_predictions, keep_embeddings = dumps
    if keep_predictions:
        ids = [data.graph.node_ids[i] for i in test]
        record.predictions = _prediction_frame(ids, probs[test], data.labels[test])
        record.synthetic_origin = aug.origin_records()
    if keep_embeddings:
        h = embed(aug.graph, aug.features, params, config)[:n]
        record.embeddings = _embedding_frame(data.graph.node_ids, data.labels, h)
    return record


def _cpdp_repetition(
    source: _Prepared,
    target: _Prepared,
    config: ModelConfig,
    fractions: tuple,
    index: int,
    seed: int,
    dumps: tuple[bool, bool],
) -> RunRecord:
    rng = np.random.default_rng(seed)
    redraws = 0
    while True:
        train_mask, val_mask = stratified_split(source.labels, fractions, rng)
        if _both_classes(source.labels[train_mask]):
            break
        redraws += 1
        if redraws >= MAX_REDRAWS:
            raise ValidationError(f"could not draw a two-class training split in {MAX_REDRAWS} tries")

    params, history = train(source.graph, source.X, source.labels, train_mask, val_mask, config, rng)
    probs = forward(target.graph, target.X, params, config)[:, 1]
    record = RunRecord(
        index=index,
        seed=seed,
        source=source.name,
        target=target.name,
        metrics=confusion_and_threshold_metrics(probs, target.labels),
        selected_epoch=history.selected_epoch,
        n_synthetic=history.augmented.n_synthetic,
        redraws=redraws,
        val_score=_selected_val_score(history),
    )
    keep_predictions, keep_embeddings = dumps
    if keep_predictions:
        record.predictions = _prediction_frame(target.graph.node_ids, probs, target.labels)
    if keep_embeddings:
        h = embed(target.graph, target.X, params, config)
        record.embeddings = _embedding_frame(target.graph.node_ids, target.labels, h)
    return record


def _run_jobs(report: ExperimentReport, jobs: list[RepetitionJob], n_jobs: int, progress: ProgressFn | None) -> ExperimentReport:
    try:
        report.runs = RepetitionWorker(jobs, n_jobs=n_jobs, progress=progress).run()
    except RepetitionFailed as e:
        report.runs = list(e.completed)
        report.partial = True
        raise ExperimentInterrupted(report, e.cause) from e.cause
    return report


def _resolved_config(config: ModelConfig, **extra) -> dict:
    d = config.to_dict()
    d.update(extra)
    return d


def run_wpdp(
    dataset: VersionDataset,
    view: GraphView | str,
    config: ModelConfig,
    reps: int = 100,
    rng: np.random.Generator | None = None,
    *,
    seed: int | None = None,
    fractions: Sequence[float] = WPDP_FRACTIONS,
    sum_normalized: bool = False,
    n_jobs: int = 1,
    progress: ProgressFn | None = None,
    keep_predictions: bool = False,
    keep_embeddings: bool = False,
    method: str | None = None,
) -> ExperimentReport:
    '''
    Within-project campaign: `reps` fresh 70/15/15 splits of one version.

    Metrics are normalized and the graph view is built once; each repetition
    splits, oversamples, trains and scores the test nodes.

    Args:
        dataset: The version to evaluate.
        view: cdg, ddg or msdg.
        config: Model hyperparameters.
        reps: Number of repetitions.
        rng: Source of the per-repetition seeds.
        seed: Master seed, recorded in the report only.
        n_jobs: Worker processes for the repetitions.

    Raises:
        ExperimentInterrupted: A repetition failed; the partial report is attached.
    '''
    if reps < 1:
        raise ValidationError(f"reps must be >= 1, got {reps}")
    if not _both_classes(dataset.labels()):
        raise ValidationError(f"{dataset.name} needs both defective and clean files")
    rng = rng if rng is not None else np.random.default_rng(seed)
    view = GraphView.parse(view)
    data = prepare(dataset, view, sum_normalized)
    seeds = draw_seeds(rng, reps)
    fractions = tuple(float(f) for f in fractions)

    report = ExperimentReport(
        protocol="WPDP",
        dataset=dataset.name,
        method=method or f"BiGGNN-{view.value}",
        view=view.value,
        config=_resolved_config(config, sum_normalized_views=sum_normalized, reps=reps, fractions=list(fractions)),
        seed=seed,
    )
    dumps = (keep_predictions, keep_embeddings)
    jobs = [
        RepetitionJob(i, _wpdp_repetition, (data, config, fractions, i, s, dumps), label=dataset.name)
        for i, s in enumerate(seeds)
    ]
    logger.info("WPDP %s on %s: %d repetition(s)", view.value, dataset.name, reps)
    return _run_jobs(report, jobs, n_jobs, progress)


def _check_transfer(source: VersionDataset, target: VersionDataset) -> bool:
    if source.manifest.names != target.manifest.names:
        raise ValidationError(
            f"metric manifests of {source.name} and {target.name} differ"
        )
    if source.name == target.name:
        logger.warning("CPDP source and target are both %s; test nodes were seen in training", source.name)
        return True
    return False


def run_cpdp(
    source_dataset: VersionDataset,
    target_dataset: VersionDataset,
    config: ModelConfig,
    reps: int = 20,
    rng: np.random.Generator | None = None,
    **kwargs,
) -> ExperimentReport:
    '''
    Cross-project campaign with a single source version.

    Each repetition trains on an 80/20 train/validation split of the source
    graph and scores every node of the target, using the target's own graph.
    Keyword arguments are those of run_cpdp_campaign.
    '''
    return run_cpdp_campaign([source_dataset], target_dataset, config, reps, rng, **kwargs)


def run_cpdp_campaign(
    sources: Sequence[VersionDataset],
    target: VersionDataset,
    config: ModelConfig,
    reps: int = 20,
    rng: np.random.Generator | None = None,
    *,
    view: GraphView | str = GraphView.MSDG,
    seed: int | None = None,
    fractions: Sequence[float] = CPDP_FRACTIONS,
    sum_normalized: bool = False,
    n_jobs: int = 1,
    progress: ProgressFn | None = None,
    keep_predictions: bool = False,
    keep_embeddings: bool = False,
    method: str | None = None,
) -> ExperimentReport:
    '''
    Cross-project schedule: every source version trains `reps` models that are
    all scored on the target, giving len(sources) * reps runs.

    Seeds are drawn source by source, in the order given.
    '''
    if reps < 1:
        raise ValidationError(f"reps must be >= 1, got {reps}")
    if not sources:
        raise ValidationError("at least one source version is needed")
    rng = rng if rng is not None else np.random.default_rng(seed)
    view = GraphView.parse(view)
    leakage = any([_check_transfer(s, target) for s in sources])
    for s in sources:
        if not _both_classes(s.labels()):
            raise ValidationError(f"{s.name} needs both defective and clean files")

    prepared_target = prepare(target, view, sum_normalized)
    fractions = tuple(float(f) for f in fractions)
    dumps = (keep_predictions, keep_embeddings)
    jobs: list[RepetitionJob] = []
    for s in sources:
        prepared_source = prepared_target if s.name == target.name else prepare(s, view, sum_normalized)
        for seed_i in draw_seeds(rng, reps):
            i = len(jobs)
            args = (prepared_source, prepared_target, config, fractions, i, seed_i, dumps)
            jobs.append(RepetitionJob(i, _cpdp_repetition, args, label=f"{s.name} -> {target.name}"))

    report = ExperimentReport(
        protocol="CPDP",
        dataset=target.name,
        method=method or f"BiGGNN-{view.value}",
        view=view.value,
        config=_resolved_config(
            config,
            sum_normalized_views=sum_normalized,
            reps=reps,
            fractions=list(fractions),
            sources=[s.name for s in sources],
        ),
        seed=seed,
        leakage=leakage,
    )
    logger.info("CPDP %s: %d source(s) x %d rep(s) -> %s", view.value, len(sources), reps, target.name)
    return _run_jobs(report, jobs, n_jobs, progress)


def read_predictions(path: str) -> pd.DataFrame:
    '''
    Read a baseline prediction file with columns file,prob_defective.
    '''
    if not os.path.isfile(path):
        raise ValidationError(f"file not found: {path}")
    try:
        df = pd.read_csv(path, dtype={"file": str}, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise ValidationError(f"{path} is empty") from None
    for col in ("file", "prob_defective"):
        if col not in df.columns:
            raise SchemaError(col, path)
    try:
        df["prob_defective"] = pd.to_numeric(df["prob_defective"], errors="raise")
    except (TypeError, ValueError):
        raise ValidationError(f"{path}: prob_defective must be numeric") from None
    return df


def score_baseline(
    dataset: VersionDataset,
    prediction_csvs: Sequence[str],
    method: str,
    protocol: str = "WPDP",
) -> ExperimentReport:
    '''
    Turn external prediction files (one per repetition) into a report.

    Each file lists `file,prob_defective` for the files that repetition
    predicted; labels come from the dataset.
    '''
    if not prediction_csvs:
        raise ValidationError("no prediction files given")
    labels = dataset.labels()
    report = ExperimentReport(protocol=protocol, dataset=dataset.name, method=method,
                              config={"prediction_files": [os.path.basename(p) for p in prediction_csvs]})
    for i, path in enumerate(prediction_csvs):
        df = read_predictions(path)
        try:
            idx = np.array([dataset.index_of(f) for f in df["file"]], dtype=np.int64)
        except ValidationError as e:
            raise ValidationError(f"{path}: {e} in {dataset.name}") from None
        report.runs.append(
            RunRecord(
                index=i,
                seed=0,
                source=dataset.name,
                target=dataset.name,
                metrics=confusion_and_threshold_metrics(df["prob_defective"].to_numpy(), labels[idx]),
            )
        )
    return report


def compare_reports(a: ExperimentReport, b: ExperimentReport, measures: Sequence[str] = MEASURES) -> list[StatTestResult]:
    '''
    Paired tests of two campaigns, matched by repetition index.

    Every measure gets a Wilcoxon signed-rank p (Bonferroni over all the
    measures compared) and Cliff's delta of a against b. Pairs where either
    side is nan are left out.
    '''
    if len(a.runs) != len(b.runs):
        raise ValidationError(f"reports have {len(a.runs)} and {len(b.runs)} repetitions")
    if [r.index for r in a.runs] != [r.index for r in b.runs]:
        raise ValidationError("reports do not cover the same repetition indexes")
    results = []
    for measure in measures:
        va, vb = a.values(measure), b.values(measure)
        keep = ~(np.isnan(va) | np.isnan(vb))
        if not keep.all():
            logger.warning("%s: dropping %d pair(s) with undefined values", measure, int((~keep).sum()))
        if not keep.any():
            raise ValidationError(f"no defined {measure} pairs to compare")
        results.append(paired_test(va[keep], vb[keep], m=len(measures), measure=measure))
    return results


def comparison_frame(results: Sequence[StatTestResult]) -> pd.DataFrame:
    return pd.DataFrame([r.to_dict() for r in results])


def summary_table(reports: Sequence[ExperimentReport], measures: Sequence[str] = MEASURES) -> pd.DataFrame:
    '''
    Median of every measure per dataset version and method.

    Rows are dataset versions plus a final "Average" row; columns are a
    (measure, method) MultiIndex.
    '''
    rows: dict[str, dict[tuple[str, str], float]] = {}
    methods: list[str] = []
    for r in reports:
        if r.method not in methods:
            methods.append(r.method)
        row = rows.setdefault(r.dataset, {})
        for m in measures:
            row[(m, r.method)] = r.median(m)
    columns = pd.MultiIndex.from_tuples([(m, meth) for m in measures for meth in methods], names=["measure", "method"])
    table = pd.DataFrame.from_dict(rows, orient="index").reindex(columns=columns)
    table.index.name = "dataset"
    table.loc["Average"] = table.mean(axis=0, skipna=True)
    return table


def write_run_dumps(report: ExperimentReport, out_dir: str, stem: str) -> list[str]:
    '''
    Write the prediction, embedding and synthetic-node dumps kept on the runs.

    Returns:
        Paths written.
    '''
    written = []
    for run in report.runs:
        base = os.path.join(out_dir, f"{stem}.rep{run.index:03d}")
        if run.predictions is not None:
            path = f"{base}.predictions.csv"
            run.predictions.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")
            written.append(path)
        if run.embeddings is not None:
            path = f"{base}.embeddings.csv"
            run.embeddings.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")
            written.append(path)
        if run.synthetic_origin:
            path = f"{base}.synthetic.json"
            with open(path, "w", encoding="utf-8", newline="\n") as f:
                json.dump(run.synthetic_origin, f, indent=2)
                f.write("\n")
            written.append(path)
    return written


def report_runs_frame(report: ExperimentReport) -> pd.DataFrame:
    """One row per repetition with the five measures."""
    return pd.DataFrame(
        [{"index": r.index, "seed": r.seed, "source": r.source, **{m: r.metrics.measure(m) for m in MEASURES}}
         for r in report.runs]
    )
