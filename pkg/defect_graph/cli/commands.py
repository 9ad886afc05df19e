from __future__ import annotations

import argparse
import logging
import math
import os
from dataclasses import replace
from typing import Sequence

import numpy as np
import pandas as pd

from ..analysis import (
    interclass_distance,
    neighbor_share_table,
    read_feature_dump,
    same_label_weight_share,
    separability_table,
    write_analysis_json,
)
from ..errors import ExperimentInterrupted, UsageError, ValidationError
from ..graph import GraphView, build_view, read_graph, write_graph
from ..ingest import (
    METRICS_FILE,
    SyntheticConfig,
    VersionDataset,
    generate_synthetic,
    infer_manifest_from_metrics,
    load_dataset_dir,
    parse_dependencies,
    parse_metrics,
    parse_ownership,
    read_manifest,
    write_dataset_dir,
)
from ..model import SEARCH_SPACE, ModelConfig, random_search
from ..protocols import (
    ExperimentReport,
    comparison_frame,
    compare_reports,
    report_runs_frame,
    run_cpdp_campaign,
    run_wpdp,
    score_baseline,
    summary_table,
    write_run_dumps,
)
from .config import RunConfig, format_run_config, read_run_config, write_run_config

logger = logging.getLogger(__name__)


def _require_path(path: str | None, what: str) -> str:
    if not path:
        raise UsageError(f"missing {what}")
    if not os.path.exists(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _out(args: argparse.Namespace, name: str) -> str:
    return os.path.join(args.out_dir, name)


def _load_files(args: argparse.Namespace) -> VersionDataset:
    metrics = _require_path(args.metrics, "metrics file")
    deps = _require_path(args.deps, "dependency file")
    ownership = _require_path(args.ownership, "ownership file")
    if args.manifest:
        manifest, extra = read_manifest(_require_path(args.manifest, "manifest file"))
    else:
        manifest, extra = infer_manifest_from_metrics(metrics), {}
    project = args.name or str(extra.get("project", "dataset"))
    return VersionDataset(
        project=project,
        version="" if args.name else str(extra.get("version", "")),
        manifest=manifest,
        records=parse_metrics(metrics, manifest),
        dep_edges=parse_dependencies(deps),
        ownership=parse_ownership(ownership),
    )


def cmd_build_graph(args: argparse.Namespace) -> int:
    '''
    Build and export graph views of one dataset.

    Writes `<name>.<view>.edges.csv` plus a `<name>.<view>.json` sidecar per view.
    Weights are exported raw unless --normalize is given.
    '''
    if args.dataset:
        dataset = load_dataset_dir(_require_path(args.dataset, "dataset directory"))
    else:
        dataset = _load_files(args)

    views = list(GraphView) if args.view == "all" else [GraphView.parse(args.view)]
    print(f"{dataset.name}: {len(dataset.records)} files, defect rate {dataset.defect_rate:.4f}")
    for view in views:
        graph = build_view(dataset, view, normalize=args.normalize, sum_normalized=args.sum_normalized)
        edges_path, _ = write_graph(graph, _out(args, f"{dataset.name}.{view.value.lower()}"))
        print(f"  {view.value}: {graph.n_nodes} nodes, {graph.n_edges} edges -> {edges_path}")
    return 0


def _stem(report: ExperimentReport) -> str:
    return f"{report.dataset}.{report.protocol.lower()}.{report.view.lower()}"


def _write_report(args: argparse.Namespace, report: ExperimentReport) -> str:
    stem = _stem(report)
    path = _out(args, f"{stem}.report.json")
    report.write_json(path)
    report_runs_frame(report).to_csv(_out(args, f"{stem}.runs.csv"), index=False, lineterminator="\n")
    summary_table([report]).to_csv(_out(args, f"{stem}.summary.csv"), lineterminator="\n")
    return path


def _run_protocol(cfg: RunConfig, model: ModelConfig, rng: np.random.Generator, args, **dumps) -> ExperimentReport:
    common = dict(
        seed=args.seed,
        sum_normalized=cfg.sum_normalized_views,
        n_jobs=args.jobs,
        method=cfg.method,
        **dumps,
    )
    if cfg.protocol == "wpdp":
        dataset = load_dataset_dir(cfg.resolve(cfg.dataset))
        return run_wpdp(dataset, cfg.view, model, cfg.reps, rng, **common)
    target = load_dataset_dir(cfg.resolve(cfg.target))
    sources = [load_dataset_dir(cfg.resolve(s)) for s in cfg.sources]
    return run_cpdp_campaign(sources, target, model, cfg.reps, rng, view=cfg.view, **common)


def cmd_experiment(args: argparse.Namespace) -> int:
    '''
    Run the campaign described by a config file and write its report JSON,
    per-repetition CSV and summary CSV. A failed campaign still writes the
    finished repetitions, flagged partial, before exiting non-zero.
    '''
    cfg = read_run_config(args.config)
    cfg.check_paths()
    model = cfg.model_config(args.seed)
    rng = np.random.default_rng(args.seed)
    try:
        report = _run_protocol(
            cfg, model, rng, args,
            keep_predictions=args.dump_predictions,
            keep_embeddings=args.dump_embeddings,
        )
    except ExperimentInterrupted as e:
        e.report.config["run"] = format_run_config(cfg)
        path = _write_report(args, e.report)
        logger.error("wrote partial report %s", path)
        raise

    report.config["run"] = format_run_config(cfg)
    path = _write_report(args, report)
    written = write_run_dumps(report, args.out_dir, _stem(report))
    if args.plot:
        from ..plotter import plot_metric_boxplots
        written.append(plot_metric_boxplots([report], _out(args, f"{_stem(report)}.png")))

    medians = ", ".join(
        f"{k}={'nan' if math.isnan(v) else f'{v:.4f}'}" for k, v in report.medians.items()
    )
    print(f"{report.method} {report.protocol} {report.dataset}: {len(report.runs)} run(s); medians {medians}")
    print(f"report: {path}")
    for p in written:
        logger.debug("wrote %s", p)
    return 0


def cmd_tune(args: argparse.Namespace) -> int:
    '''
    Random search over the hyperparameter grid, scoring each sampled config by
    the median validation AUC of a few repetitions. Writes the best config as
    a run-config file plus a CSV of every trial.
    '''
    if args.budget < 1:
        raise UsageError(f"--budget must be >= 1, got {args.budget}")
    if args.reps < 1:
        raise UsageError(f"--reps must be >= 1, got {args.reps}")
    cfg = read_run_config(args.config)
    cfg.check_paths()
    search_seq, eval_seq = np.random.SeedSequence(args.seed).spawn(2)
    eval_seed = int(eval_seq.generate_state(1)[0])
    small = replace(cfg, reps=args.reps)

    def evaluate(model: ModelConfig) -> float:
        # every config sees the same splits
        report = _run_protocol(small, model, np.random.default_rng(eval_seed), args)
        scores = np.array([r.val_score for r in report.runs], dtype=np.float64)
        if np.all(np.isnan(scores)):
            return -math.inf
        return float(np.nanmedian(scores))

    trials: list = []
    best = random_search(
        SEARCH_SPACE,
        args.budget,
        evaluate,
        np.random.default_rng(search_seq),
        base=cfg.model_config(args.seed),
        trials=trials,
    )
    best_score = max(score for _, score in trials)
    out_cfg = cfg.with_model(best)
    path = _out(args, "best.conf")
    write_run_config(out_cfg, path, header=f"tuned with seed={args.seed} budget={args.budget}\nvalidation auc={best_score:.6f}")

    rows = [{**c.to_dict(), "score": s} for c, s in trials]
    for row in rows:
        row["mlp_hidden"] = ",".join(str(x) for x in row["mlp_hidden"])
    pd.DataFrame(rows).to_csv(_out(args, "tune_trials.csv"), index=False, lineterminator="\n")
    print(f"best of {args.budget} config(s): validation AUC {best_score:.4f} -> {path}")
    return 0


def _read_labels(path: str) -> tuple[str, dict[str, int]]:
    """Labels by file id from a dataset directory or any CSV with file,label columns."""
    if os.path.isdir(path):
        name = os.path.basename(os.path.normpath(path))
        path = os.path.join(path, METRICS_FILE)
    else:
        name = os.path.splitext(os.path.basename(path))[0]
    if not os.path.isfile(path):
        raise UsageError(f"labels file not found: {path}")
    df = pd.read_csv(path, dtype={"file": str}, usecols=lambda c: c in ("file", "label"))
    if "file" not in df.columns or "label" not in df.columns:
        raise ValidationError(f"{path} needs file and label columns")
    labels = pd.to_numeric(df["label"], errors="coerce")
    bad = ~labels.isin([0, 1])
    if bad.any():
        rows = ", ".join(f"{df['file'].iat[i]}={df['label'].iat[i]!r}" for i in np.flatnonzero(bad.to_numpy())[:5])
        raise ValidationError(f"{path}: labels must be 0 or 1, got {rows}")
    return name, {f: int(l) for f, l in zip(df["file"], labels)}


def cmd_analyze(args: argparse.Namespace) -> int:
    '''
    Neighbour-share analysis of exported graphs (--graphs, with --labels) and/or
    inter-class distance of feature dumps (--features). Writes one CSV row per
    analysis plus a JSON report.
    '''
    if not args.graphs and not args.features:
        raise UsageError("give --graphs (with --labels) and/or --features")
    written = []

    if args.graphs:
        if not args.labels:
            raise UsageError("--graphs needs --labels")
        name, by_file = _read_labels(_require_path(args.labels, "labels"))
        name = args.name or name
        shares = {}
        payload = {"dataset": name, "views": {}}
        for gpath in args.graphs:
            graph = read_graph(_require_path(gpath, "graph sidecar"))
            try:
                labels = np.array([by_file[f] for f in graph.node_ids], dtype=np.int64)
            except KeyError as k:
                raise ValidationError(f"no label for graph node {k}") from None
            report = same_label_weight_share(graph, labels)
            shares[graph.view.value] = report
            payload["views"][graph.view.value] = report.to_dict(graph.node_ids)
            print(f"{name} {graph.view.value}: P_total = {report.p_total:.4f}")
        path = _out(args, f"{name}.neighbor_share.csv")
        neighbor_share_table(name, shares).to_csv(path, lineterminator="\n")
        write_analysis_json(_out(args, f"{name}.neighbor_share.json"), payload)
        written.append(path)

    if args.features:
        name = args.name or "dataset"
        reports = {}
        for fpath in args.features:
            _, labels, X = read_feature_dump(_require_path(fpath, "feature dump"))
            method = os.path.basename(fpath).split(".")[0] if len(args.features) > 1 else "features"
            if method in reports:
                method = os.path.basename(fpath)
            reports[method] = interclass_distance(X, labels, already_normalized=args.already_normalized)
            print(f"{name} {method}: distance = {reports[method].distance:.4f}")
        path = _out(args, f"{name}.separability.csv")
        separability_table(name, reports).to_csv(path, lineterminator="\n")
        write_analysis_json(
            _out(args, f"{name}.separability.json"),
            {"dataset": name, "methods": {m: r.to_dict() for m, r in reports.items()}},
        )
        written.append(path)

    for p in written:
        logger.info("wrote %s", p)
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    '''
    Paired Wilcoxon / Cliff's delta comparison of two reports over the five
    measures (Bonferroni m = 5).
    '''
    a = ExperimentReport.read_json(_require_path(args.report_a, "report"))
    b = ExperimentReport.read_json(_require_path(args.report_b, "report"))
    try:
        results = compare_reports(a, b)
    except ValidationError as e:
        raise UsageError(str(e)) from None
    frame = comparison_frame(results)
    stem = f"compare.{a.method}.vs.{b.method}".replace(os.sep, "_")
    frame.to_csv(_out(args, f"{stem}.csv"), index=False, lineterminator="\n")
    write_analysis_json(
        _out(args, f"{stem}.json"),
        {"a": a.method, "b": b.method, "dataset": a.dataset, "tests": [r.to_dict() for r in results]},
    )
    print(frame.to_string(index=False))
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    '''
    Generate synthetic dataset directories, one per requested version. Version
    i uses a seed derived from --seed and i.
    '''
    versions: Sequence[str] = [v.strip() for v in args.versions.split(",") if v.strip()]
    if not versions:
        raise UsageError("--versions is empty")
    for i, version in enumerate(versions):
        cfg = SyntheticConfig(
            n_nodes=args.n_nodes,
            defect_rate=args.defect_rate,
            homophily=args.homophily,
            n_developers=args.n_developers,
            mean_degree=args.mean_degree,
            n_metrics=args.n_metrics,
            separation=args.separation,
            shared_signal=args.shared_signal,
            project=args.project,
            version=version,
        )
        seed = int(np.random.SeedSequence([args.seed, i]).generate_state(1)[0])
        dataset = generate_synthetic(cfg, seed)
        path = _out(args, dataset.name)
        write_dataset_dir(dataset, path)
        print(f"{dataset.name}: {len(dataset.records)} files, defect rate {dataset.defect_rate:.4f} -> {path}")
    return 0


def cmd_score_baseline(args: argparse.Namespace) -> int:
    '''
    Score external prediction files (one per repetition) against a dataset so
    the result can be compared with `compare`.
    '''
    dataset = load_dataset_dir(_require_path(args.dataset, "dataset directory"))
    paths = [_require_path(p, "prediction file") for p in args.predictions]
    report = score_baseline(dataset, paths, args.method, protocol=args.protocol)
    report.view = "none"
    path = _out(args, f"{dataset.name}.{report.protocol.lower()}.{args.method}.report.json")
    report.write_json(path)
    print(f"{args.method} on {dataset.name}: {len(report.runs)} run(s) -> {path}")
    return 0
