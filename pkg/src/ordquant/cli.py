"""Command-line entry point: ``ordquant <command> [options]``.

Every command takes ``--config`` plus flag overrides and writes its outputs
under ``--out``. Failures print ``error: <category>: <message>`` on stderr and
exit with status 2.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from ordquant import io
from ordquant._parallel import default_threads
from ordquant.errors import ConfigError, OrdQuantError
from ordquant.labelling import build_labelled_dataset, user_effects
from ordquant.protocol import derived_seed, fit_for_protocol, run_protocol
from ordquant.selection import (
    ProtocolLoss,
    greedy_select,
    importance_report,
    overlap_table,
)
from ordquant.synth import BlockSpec, SynthSpec, generate, generate_comments, label_cohorts

log = logging.getLogger("ordquant")


def _out(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset(cfg):
    features, labels, schema = cfg.require("features", "labels", "schema")
    return io.load_dataset(features, labels, schema)


def _parse_blocks(text: str, signal: bool) -> list[BlockSpec]:
    blocks = []
    for item in filter(None, (t.strip() for t in text.split(","))):
        parts = item.split(":")
        try:
            if signal:
                name, dim, sep = parts
                blocks.append(BlockSpec(name, int(dim), float(sep)))
            else:
                name, dim = parts
                blocks.append(BlockSpec(name, int(dim)))
        except ValueError:
            raise ConfigError(f"bad block spec {item!r}") from None
    return blocks


def cmd_synth(cfg, args) -> None:
    out = _out(cfg)
    s = cfg.synth
    if args.kind == "dataset":
        blocks = _parse_blocks(s.get("signal", "S1:3:0.35,S2:3:0.35"), True)
        blocks += _parse_blocks(s.get("noise", "N1:15,N2:15,N3:15,N4:15"), False)
        spec = SynthSpec(tuple(blocks), int(s.get("per_class", 500)), int(s.get("n_classes", 5)), cfg.seed)
        io.save_dataset(generate(spec), out)
        return
    cohorts = label_cohorts(int(s.get("users", 3)))
    records = generate_comments([c for c, _ in cohorts], cfg.intervention, cfg.seed, cfg.window)
    io.write_comments_jsonl(out / "comments.jsonl", records)
    users = [f"{c.name}-{u:04d}" for c, _ in cohorts for u in range(c.users)]
    rng = np.random.default_rng(cfg.seed)
    io.save_feature_matrix(out / "features.csv", rng.standard_normal((len(users), 4)), users)
    io.save_schema(io.FeatureSchema((("SYNTH", (("F", 4),)),)), out / "schema.ini")
    with open(out / "expected_labels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "activity", "toxicity", "diversity"])
        for c, intended in cohorts:
            for u in range(c.users):
                w.writerow([f"{c.name}-{u:04d}", intended["activity"], intended["toxicity"], intended["diversity"]])


def cmd_label(cfg, args) -> None:
    if cfg.task not in ("activity", "toxicity", "diversity"):
        raise ConfigError(f"labelling needs task activity, toxicity or diversity, not {cfg.task!r}")
    comments_path, features_path, schema_path = cfg.require("comments", "features", "schema")
    comments = io.read_comments_jsonl(comments_path)
    X, ids, _ = io.load_feature_matrix(features_path)
    schema = io.load_schema(schema_path)
    ds = build_labelled_dataset(comments, X, ids, schema, cfg.task, cfg.thresholds,
                                cfg.min_post_comments, cfg.window)
    out = _out(cfg)
    io.save_labels(out / "labels.csv", ds.ids, ds.labels)
    effects = user_effects(comments, cfg.task, cfg.thresholds, cfg.min_post_comments, cfg.window)
    with open(out / "effects.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "task", "pre", "post", "effect", "label", "reason"])
        for uid, e in effects.items():
            w.writerow([uid, e.task, "" if e.pre is None else repr(float(e.pre)),
                        "" if e.post is None else repr(float(e.post)),
                        "" if e.effect is None else repr(float(e.effect)),
                        "" if e.label is None else int(e.label), e.reason])
    print(f"labelled {len(ds)} of {len(ids)} users for task {cfg.task}")


def cmd_quantify(cfg, args) -> None:
    ds = _dataset(cfg)
    (unlabelled,) = cfg.require("unlabelled")
    X, ids, _ = io.load_feature_matrix(unlabelled)
    model = fit_for_protocol(cfg.quantifier, ds, cfg.resolved_protocol(), derived_seed(cfg.seed, 99))
    prev = model.estimate(X)
    out = _out(cfg)
    io.save_quantifier(model, out / "model.json")
    with open(out / "prevalence.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "prevalence"])
        for c, p in enumerate(prev, start=1):
            w.writerow([c, repr(float(p))])
    print(" ".join(f"{p:.4f}" for p in prev))


def cmd_stress(cfg, args) -> None:
    ds = _dataset(cfg)
    result = run_protocol(ds, None, cfg.quantifier, cfg.resolved_protocol())
    out = _out(cfg)
    result.to_csv(out / "eval.csv")
    lines = [f"quantifier {cfg.quantifier}", "train_size,mean_nmd"]
    lines += [f"{size},{repr(v)}" for size, v in result.mean_by_size().items()]
    lines.append(f"mnmd,{repr(result.mnmd)}")
    lines.append(f"skipped,{result.skipped}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print(f"MNMD {result.mnmd:.6f} over {len(result)} scored samples")


def cmd_select(cfg, args) -> None:
    ds = _dataset(cfg)
    pcfg = cfg.resolved_protocol()
    loss = ProtocolLoss(ds, cfg.quantifier, pcfg)
    initial = ds.schema.blocks if cfg.initial == "all" else None
    final, trace = greedy_select(ds, cfg.quantifier, pcfg, initial=initial, loss=loss,
                                 margin=cfg.margin, threads=cfg.threads)
    out = _out(cfg)
    ordered = ds.schema.ordered(final)
    (out / "selection.txt").write_text("".join(f"{b}\n" for b in ordered))
    trace.to_csv(out / "trace.csv")
    with open(out / "order.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["position", "block", "isolated_mnmd"])
        for i, b in enumerate(trace.order):
            w.writerow([i, b, repr(trace.order_losses[b])])
    with open(out / "initial.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["candidate", "mnmd"])
        for name, v in trace.initial_candidates.items():
            w.writerow([name, repr(v)])
    (out / "run.ini").write_text(cfg.to_ini())
    print(f"selected {len(ordered)} of {ds.schema.n_blocks} blocks; "
          f"MNMD {trace.initial_loss:.6f} -> {trace.final_loss:.6f}")


def cmd_report(cfg, args) -> None:
    if not args.runs:
        raise ConfigError("report needs at least one selection run directory")
    out = _out(cfg)
    selections, rankings, reports, summary = {}, {}, {}, []
    heat_rows = []
    for run_dir in map(Path, args.runs):
        sel_file = run_dir / "selection.txt"
        if not sel_file.exists():
            raise ConfigError(f"{run_dir} has no selection.txt")
        selection = [b for b in sel_file.read_text().split() if b]
        run_ini = run_dir / "run.ini"
        run_cfg = io.load_config(run_ini, threads=cfg.threads) if run_ini.exists() else None
        task = run_cfg.task if run_cfg is not None and run_cfg.task != "custom" else run_dir.name
        if task in selections:
            task = f"{task}:{run_dir.name}"
        selections[task] = selection
        rep = None
        if run_cfg is not None and not args.no_importance:
            ds = _dataset(run_cfg)
            pcfg = run_cfg.resolved_protocol()
            loss = ProtocolLoss(ds, run_cfg.quantifier, pcfg)
            rep = importance_report(ds, selection, run_cfg.quantifier, pcfg, loss, task)
            all_mnmd = loss(frozenset(ds.schema.blocks))
            summary.append((task, len(selection), ds.schema.n_blocks, all_mnmd, rep.mnmd_with))
        if rep is not None:
            rep.to_csv(out / f"importance_{task.replace(':', '_')}.csv")
            rankings[task] = rep.ranking
            reports[task] = rep
            heat_rows += [(b, task, rep.rie[b]) for b in rep.selection]
        else:
            rankings[task] = selection
    table = overlap_table(selections, rankings)
    with open(out / "overlap.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task_a", "task_b", "jaccard", "rbo"])
        for a, b, j, r in table:
            w.writerow([a, b, repr(j), repr(r)])
    with open(out / "heatmap.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block", "task", "rie_pct"])
        for b, t, v in heat_rows:
            w.writerow([b, t, "" if v is None else repr(100 * v)])
    lines = []
    if summary:
        lines.append(f"{'task':<14}{'selected':>14}{'MNMD all':>14}{'MNMD sel.':>14}{'reduction':>12}")
        for task, k, F, all_m, sel_m in summary:
            red = (all_m - sel_m) / all_m if all_m else float("nan")
            lines.append(f"{task:<14}{f'{k} ({100 * k / F:.0f}%)':>14}{all_m:>14.6f}{sel_m:>14.6f}{100 * red:>11.2f}%")
        lines.append("")
        lines += [f"{task}: gini {rep.gini:.4f}" for task, rep in reports.items()]
        lines.append("")
    lines.append(f"{'pair':<30}{'jaccard':>10}{'rbo':>10}")
    for a, b, j, r in table:
        lines.append(f"{a + ' / ' + b:<30}{j:>10.4f}{r:>10.4f}")
    if table:
        lines.append(f"{'mean':<30}{np.mean([t[2] for t in table]):>10.4f}{np.mean([t[3] for t in table]):>10.4f}")
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    print(text, end="")


COMMANDS = {
    "synth": cmd_synth,
    "label": cmd_label,
    "quantify": cmd_quantify,
    "stress": cmd_stress,
    "select": cmd_select,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--task", choices=io.TASKS)
    common.add_argument("--quantifier", choices=("cc", "pacc", "emq", "mlpe"))
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ordquant", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("synth", parents=[common], help="write synthetic fixtures")
    p.add_argument("--kind", choices=("dataset", "comments"), default="dataset")
    sub.add_parser("label", parents=[common], help="label users from comment histories")
    sub.add_parser("quantify", parents=[common], help="fit a quantifier and estimate prevalence")
    sub.add_parser("stress", parents=[common], help="run the APP stress-test protocol")
    sub.add_parser("select", parents=[common], help="greedy feature-block selection")
    p = sub.add_parser("report", parents=[common], help="importance and cross-task overlap")
    p.add_argument("runs", nargs="*", help="directories written by 'select'")
    p.add_argument("--no-importance", action="store_true", help="skip the RIE ablations")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = io.load_config(
            args.config,
            seed=args.seed,
            task=args.task,
            quantifier=args.quantifier,
            out=args.out,
            threads=args.threads if args.threads is not None else default_threads(),
        )
        COMMANDS[args.command](cfg, args)
    except OrdQuantError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
