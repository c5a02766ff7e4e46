"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .baselines import calibrate_count_threshold, cluster_fvs, clustering_roc, count_gd_sweep
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .core import DataError, FvTable, Label, read_fv_corpus, write_fv_corpus
from .metrics import roc_auc, score_histogram, write_json_summary, write_roc_csv
from .neighborhoods import (
    DomainLabels,
    form_downloader_neighborhoods,
    malicious_score,
    merge_neighborhoods,
    read_download_edges,
)
from .rng import child_rng
from .shape import classify_neighborhood, load_threshold, save_threshold
from .simulator import generate_trace, read_sweep_csv, summarize_sweep, sweep, write_netflow, write_sweep_csv

log = logging.getLogger("shapegd")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


def _provenance(cfg: ExperimentConfig, command: str) -> dict:
    return {"command": command, "config_hash": cfg.hash(), "seed": cfg.seed}


def _comment_lines(cfg: ExperimentConfig, command: str) -> list[str]:
    return [f"shapegd {command} config_hash={cfg.hash()} seed={cfg.seed}"]


def _write_csv(path: Path, header, rows, comments=()) -> None:
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


# --------------------------------------------------------------------------
# subcommands


def cmd_calibrate(args, cfg: ExperimentConfig) -> int:
    corpus = read_fv_corpus(args.benign)
    thr, scores = ex.calibrate_threshold(cfg, corpus)
    meta = _provenance(cfg, "calibrate")
    meta.update({"corpus_size": len(corpus), "calibration_neighborhoods": int(scores.size)})
    save_threshold(args.out, thr, meta)
    log.info("gamma=%r from %d neighborhoods", thr.gamma, scores.size)
    return EXIT_OK


def cmd_simulate(args, cfg: ExperimentConfig) -> int:
    thr = load_threshold(args.threshold)
    scn = ex.waterhole_scenario(cfg, thr)
    settings = ex.sweep_settings(cfg)
    rows = sweep(scn, settings, cfg.sweep.reps, cfg.seed, args.threads, cfg.sweep.stop_on_detection)
    write_sweep_csv(args.out, rows, _comment_lines(cfg, "simulate"))
    if args.summary:
        payload = _provenance(cfg, "simulate")
        payload["settings"] = summarize_sweep(rows)
        write_json_summary(args.summary, payload)
    return EXIT_OK


def cmd_neighborhoods(args, cfg: ExperimentConfig) -> int:
    edges = read_download_edges(args.edges)
    dnc = DomainLabels.read(args.domains)
    alerts: set[str] = set()
    if args.alerts:
        alerts = {ln.strip() for ln in Path(args.alerts).read_text().splitlines() if ln.strip()}
    W = cfg.ntw.window_len
    stride = cfg.ntw.stride or W
    out = []
    if edges:
        first = min(e.timestamp for e in edges)
        last = max(e.timestamp for e in edges)
        start = cfg.downloader.window_start if cfg.downloader.window_start is not None else first
        while start <= last:
            nbds = form_downloader_neighborhoods(edges, dnc, start, W)
            if nbds:
                for n in merge_neighborhoods(nbds, cfg.downloader.min_files, alerts):
                    out.append({
                        "id": n.id,
                        "window_start": n.window_start,
                        "window_end": n.window_end,
                        "seed": n.seed,
                        "size": len(n),
                        "malicious_score": malicious_score(n, alerts),
                        "members": sorted(n.members),
                    })
            start += stride
    prov = _provenance(cfg, "neighborhoods")
    with open(args.out, "w") as fh:
        for rec in out:
            fh.write(json.dumps({**rec, **prov}, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_score(args, cfg: ExperimentConfig) -> int:
    thr = load_threshold(args.threshold)
    rows = []
    for path in args.inputs:
        table = read_fv_corpus(path)
        if len(table) and table.dim != thr.config.L:
            raise DataError(f"alert-FVs have {table.dim} dimensions, threshold expects {thr.config.L}", path)
        v = classify_neighborhood(table.values, thr.config, thr, cfg.threshold.min_alerts)
        rows.append([path, v.alert_count, repr(float(v.score)), repr(float(thr.gamma)),
                     v.label.name.lower(), int(v.below_floor)])
    _write_csv(Path(args.out), ["neighborhood", "alert_count", "score", "gamma", "label", "below_floor"], rows,
               _comment_lines(cfg, "score"))
    return EXIT_OK


def cmd_baseline(args, cfg: ExperimentConfig) -> int:
    if args.kind == "count":
        c = cfg.count
        # the sweep runs on the calibration benchmark itself, so error 0 reproduces the operating point
        bench = ex.count_benchmark(cfg)
        threshold = calibrate_count_threshold(bench, c.percentile)
        rows = count_gd_sweep(threshold, bench, [float(e) for e in c.errors])
        header = ["size_error_pct", "fp_rate", "tp_rate", "fp_sigma", "tp_sigma", "n_benign", "n_malicious"]
        _write_csv(Path(args.out), header, [[_fmt(r[h]) for h in header] for r in rows],
                   _comment_lines(cfg, "baseline count") + [f"alert_rate_threshold={threshold!r}"])
        return EXIT_OK

    if not args.fvs:
        raise ConfigError("baseline cluster needs --fvs")
    table = read_fv_corpus(args.fvs)
    if len(table) == 0:
        raise DataError("FV corpus is empty", args.fvs)
    clusters = cluster_fvs(table.values, child_rng(cfg.seed, "cluster"))
    truths = table.labels == Label.MALICIOUS
    points, auc = (None, None)
    if truths.any() and not truths.all():
        points, auc = clustering_roc(clusters, truths)
    rows = []
    for i, cl in enumerate(clusters):
        fpr, tpr = points[i + 1] if points else ("", "")
        rows.append([cl.creation_rank, len(cl.members), int(truths[list(cl.members)].sum()),
                     table.entity_ids[cl.centroid_index], _fmt(fpr), _fmt(tpr)])
    comments = _comment_lines(cfg, "baseline cluster") + [f"auc={_fmt(auc)}"]
    _write_csv(Path(args.out), ["cluster", "size", "n_malicious", "centroid", "fp_rate", "tp_rate"], rows, comments)
    return EXIT_OK


def cmd_eval(args, cfg: ExperimentConfig) -> int:
    payload = _provenance(cfg, "eval")
    if args.sweep:
        payload["settings"] = summarize_sweep(read_sweep_csv(args.sweep))
        write_json_summary(args.summary, payload)
        return EXIT_OK
    scores, truths = _read_scores(args.scores)
    curve = roc_auc(scores, truths)
    if args.out:
        write_roc_csv(args.out, curve)
    payload.update({"auc": curve.auc, "n_positive": int(truths.sum()), "n_negative": int((~truths).sum())})
    if (~truths).any() and truths.any():
        payload["histogram_overlap"] = score_histogram(scores[~truths], scores[truths], args.bins).overlap
    write_json_summary(args.summary, payload)
    return EXIT_OK


def _read_scores(path: str) -> tuple[np.ndarray, np.ndarray]:
    scores, truths = [], []
    with open(path) as fh:
        reader = csv.DictReader(ln for ln in fh if not ln.startswith("#"))
        if not reader.fieldnames or not {"score", "truth"} <= set(reader.fieldnames):
            raise DataError("expected columns score,truth", path, 1)
        for lineno, rec in enumerate(reader, start=2):
            try:
                s, t = float(rec["score"]), int(rec["truth"])
            except (TypeError, ValueError):
                raise DataError("bad score/truth value", path, lineno) from None
            if t not in (0, 1) or not math.isfinite(s):
                raise DataError("truth must be 0/1 and score finite", path, lineno)
            scores.append(s)
            truths.append(bool(t))
    return np.array(scores), np.array(truths, dtype=bool)


def cmd_generate(args, cfg: ExperimentConfig) -> int:
    if args.what == "trace":
        write_netflow(args.out, generate_trace(ex.trace_config(cfg), cfg.seed))
        return EXIT_OK
    ben, mal = ex.synthetic_corpora(cfg.histogram.L, args.n, cfg.seed)
    table: FvTable = ben if args.what == "benign" else mal
    write_fv_corpus(args.out, table)
    return EXIT_OK


def cmd_config(args, cfg: ExperimentConfig) -> int:
    sys.stdout.write(dump_config(cfg))
    sys.stdout.write(f"# config_hash={cfg.hash()}\n")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="YAML experiment config (defaults apply when omitted)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. --set ntw.window_len=25")
    common.add_argument("--seed", type=int, help="shortcut for --set seed=N")
    common.add_argument("--threads", type=int, default=1, help="worker threads for window classification")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="shapegd", description="Shape-based global malware detection toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("calibrate", parents=[common], help="fit bin edges, reference histogram and gamma")
    s.add_argument("--benign", required=True, help="benign FV corpus (CSV, optionally .gz)")
    s.add_argument("-o", "--out", required=True, help="threshold JSON to write")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("simulate", parents=[common], help="waterhole replay sweep")
    s.add_argument("--threshold", required=True)
    s.add_argument("-o", "--out", required=True, help="sweep CSV to write")
    s.add_argument("--summary", help="optional JSON summary per setting")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("neighborhoods", parents=[common], help="downloader-graph neighborhoods as JSON lines")
    s.add_argument("--edges", required=True)
    s.add_argument("--domains", required=True, help="domain,suspicious_flag file")
    s.add_argument("--alerts", help="file hashes with LD alerts, one per line")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_neighborhoods)

    s = sub.add_parser("score", parents=[common], help="classify alert-FV sets against a threshold")
    s.add_argument("--threshold", required=True)
    s.add_argument("inputs", nargs="+", help="one alert-FV corpus per neighborhood")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("baseline", parents=[common], help="Count-GD size-error sweep or clustering")
    s.add_argument("kind", choices=["count", "cluster"])
    s.add_argument("--fvs", help="labelled FV corpus (cluster)")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("eval", parents=[common], help="ROC/AUC of scored outcomes or a sweep summary")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--scores", help="CSV with score,truth columns")
    g.add_argument("--sweep", help="sweep CSV from 'simulate'")
    s.add_argument("-o", "--out", help="ROC CSV to write")
    s.add_argument("--summary", required=True, help="JSON summary to write")
    s.add_argument("--bins", type=int, default=50)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("generate", parents=[common], help="write synthetic inputs")
    s.add_argument("what", choices=["benign", "malicious", "trace"])
    s.add_argument("-n", type=int, default=100_000, help="corpus size")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("config", parents=[common], help="print the resolved config and its hash")
    s.set_defaults(func=cmd_config)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        overrides = list(args.overrides) + ([f"seed={args.seed}"] if args.seed is not None else [])
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"shapegd: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"shapegd: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"shapegd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
