"""Command line entry point: ``run``, ``compare`` and ``selfcheck``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import SCHEMA_VERSION, ExperimentConfig, load_config
from .core import max_threads
from .driver import OuterDivergence, RunRecord, method_label, run_outer

logger = logging.getLogger("sparse_ekp")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2
EXIT_SELFCHECK = 3


def _floats(a):
    return None if a is None else [float(x) for x in np.asarray(a).ravel()]


def _run_one(cfg: ExperimentConfig, seed: int):
    problem = cfg.build_problem(seed)
    try:
        record = run_outer(problem, cfg.outer_config(), seed)
    except OuterDivergence as exc:
        record = exc.record
    record.config_hash = cfg.config_hash()
    return problem, record


def _record_json(cfg, problem, record: RunRecord):
    return {
        "seed": record.seed,
        "status": record.status,
        "stop_reason": record.stop_reason,
        "method": method_label(cfg.solver.variant, cfg.solver.r),
        "truth": _floats(problem.truth),
        "support": None if problem.support is None else [int(i) for i in problem.support],
        "steps": [
            {
                "outer": s.index,
                "theta": _floats(s.theta),
                "estimate": _floats(s.estimate),
                "theta_next": _floats(s.theta_next),
                "lower": _floats(s.lower),
                "upper": _floats(s.upper),
                "misfit": float(s.misfit),
                "inner_iterations": s.inner_iterations,
                "metrics": s.metrics,
                **({"ensemble": s.ensemble.tolist()} if s.ensemble is not None else {}),
            }
            for s in record.steps
        ],
    }


METRIC_COLUMNS = ("l2_error", "avg_width", "off_support_norm", "misfit")


def _fmt(x):
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    return repr(float(x))


def write_outputs(cfg: ExperimentConfig, results, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    formats = set(cfg.output.formats)
    if "json" in formats:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "version": __version__,
            "config": cfg.model_dump(mode="json"),
            "config_hash": cfg.config_hash(),
            "problem_hash": cfg.problem_hash(),
            "runs": [_record_json(cfg, p, r) for p, r in results],
        }
        (out_dir / "results.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    if "csv" in formats:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["seed", "outer", "status", *METRIC_COLUMNS])
        for _, rec in results:
            for s in rec.steps:
                row = [rec.seed, s.index, rec.status]
                row += [_fmt(s.metrics.get(m)) for m in METRIC_COLUMNS[:-1]] + [_fmt(s.misfit)]
                w.writerow(row)
            if rec.status != "ok":
                w.writerow([rec.seed, len(rec.steps), "diverged", "", "", "", ""])
        (out_dir / "metrics.csv").write_text(buf.getvalue(), newline="")

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["seed", "outer", "component", "truth", "estimate", "lower", "upper"])
        for prob, rec in results:
            truth = prob.truth
            for s in rec.steps:
                for i in range(s.estimate.size):
                    w.writerow([rec.seed, s.index, i, "" if truth is None else _fmt(truth[i]),
                                _fmt(s.estimate[i]), _fmt(s.lower[i]), _fmt(s.upper[i])])
        (out_dir / "estimates.csv").write_text(buf.getvalue(), newline="")


def cmd_run(config, overrides=(), seed_list=None, out=None) -> int:
    try:
        cfg = load_config(config, overrides, seed_list, out)
    except Exception as exc:  # config errors of every kind map to exit 1
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    seeds = cfg.replicates.seeds
    threads = min(max_threads(), len(seeds))
    t0 = time.perf_counter()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda s: _run_one(cfg, s), seeds))
    else:
        results = [_run_one(cfg, s) for s in seeds]
    out_dir = Path(cfg.output.directory)
    write_outputs(cfg, results, out_dir)
    diverged = [r.seed for _, r in results if r.status != "ok"]
    logger.info("%d runs in %.1fs -> %s", len(results), time.perf_counter() - t0, out_dir)
    if diverged:
        print(f"diverged for seeds {diverged}; partial results in {out_dir}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"wrote {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# compare


def summarize(doc):
    """Seed-averaged metric per outer iteration: ``{metric: [mean per outer]}``."""
    runs = [r for r in doc["runs"] if r["steps"]]
    n_outer = min(len(r["steps"]) for r in runs)
    out = {}
    for metric in ("l2_error", "avg_width"):
        vals = np.array([[s["metrics"].get(metric, np.nan) for s in r["steps"][:n_outer]] for r in runs])
        out[metric] = vals.mean(axis=0).tolist()
    return out


def compare_table(docs, labels):
    n_outer = max(len(summarize(d)["l2_error"]) for d in docs)
    header = ["metric", "method"] + [_ordinal(i) for i in range(n_outer)]
    rows = []
    sums = [summarize(d) for d in docs]
    for metric in ("l2_error", "avg_width"):
        for label, s in zip(labels, sums):
            vals = s[metric] + [np.nan] * (n_outer - len(s[metric]))
            rows.append([metric, label] + vals)
        for label, s in list(zip(labels, sums))[1:]:
            base = sums[0][metric]
            m = min(len(base), len(s[metric]))
            diff = [s[metric][i] - base[i] for i in range(m)] + [np.nan] * (n_outer - m)
            rows.append([metric, f"{label} - {labels[0]}"] + diff)
    return header, rows


def _ordinal(i):
    suffix = "th" if 10 <= i % 100 <= 20 else {1: "st", 2: "nd", 3: "rd"}.get(i % 10, "th")
    return f"{i}{suffix}"


def _unique_labels(docs):
    labels = [d["runs"][0]["method"] if d["runs"] else "?" for d in docs]
    seen = {}
    out = []
    for lab in labels:
        seen[lab] = seen.get(lab, 0) + 1
        out.append(lab if labels.count(lab) == 1 else f"{lab}#{seen[lab]}")
    return out


def cmd_compare(paths, out) -> int:
    docs = []
    for p in paths:
        try:
            docs.append(json.loads(Path(p).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            print(f"cannot read {p}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    if len(docs) < 2:
        print("compare needs at least two results files", file=sys.stderr)
        return EXIT_CONFIG
    hashes = {d.get("problem_hash") for d in docs}
    if len(hashes) != 1:
        print(f"results describe different problems: {sorted(map(str, hashes))}", file=sys.stderr)
        return EXIT_CONFIG
    labels = _unique_labels(docs)
    header, rows = compare_table(docs, labels)

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row[:2] + [_fmt(v) for v in row[2:]])
    (out_dir / "compare.csv").write_text(buf.getvalue(), newline="")

    text = format_text_table(header, rows)
    (out_dir / "compare.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def format_text_table(header, rows):
    cells = [header] + [r[:2] + [("" if np.isnan(v) else f"{v:.3f}") for v in r[2:]] for r in rows]
    widths = [max(len(str(c[i])) for c in cells) for i in range(len(header))]
    lines = []
    for j, c in enumerate(cells):
        lines.append("  ".join(str(x).ljust(wd) if i < 2 else str(x).rjust(wd)
                               for i, (x, wd) in enumerate(zip(c, widths))))
        if j == 0:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# selfcheck


def cmd_selfcheck() -> int:
    from .selfcheck import run_checks

    t0 = time.perf_counter()
    results = run_checks()
    for name, ok, detail in results:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    failed = [n for n, ok, _ in results if not ok]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {time.perf_counter() - t0:.1f}s")
    return EXIT_SELFCHECK if failed else EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="sparse-ekp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("--config", required=True, help="config path or bundled config name")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                     help="override a config entry, e.g. solver.r=0.5")
    run.add_argument("--seed-list", default=None, help="comma separated replicate seeds")
    run.add_argument("--out", default=None, help="output directory")

    cmp_ = sub.add_parser("compare", help="tabulate seed-averaged metrics of several runs")
    cmp_.add_argument("results", nargs="+")
    cmp_.add_argument("--out", required=True)

    sub.add_parser("selfcheck", help="run the fast oracle suite")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        seeds = None
        if args.seed_list:
            try:
                seeds = [int(s) for s in args.seed_list.split(",") if s.strip()]
            except ValueError:
                print(f"config error: bad seed list {args.seed_list!r}", file=sys.stderr)
                return EXIT_CONFIG
        return cmd_run(args.config, args.overrides, seeds, args.out)
    if args.command == "compare":
        return cmd_compare(args.results, args.out)
    return cmd_selfcheck()


if __name__ == "__main__":
    sys.exit(main())
