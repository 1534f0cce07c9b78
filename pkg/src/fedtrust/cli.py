"""Command line entry point: ``fedtrust simulate | evaluate | compare``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

from . import experiment as ex
from .errors import ConfigError, DivergenceError, InputError
from .metrics import TAXONOMY
from .scoring import PILLAR_TITLES, SCHEMA_VERSION, render, validate_report

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED = 0, 2, 3

log = logging.getLogger("fedtrust")


def _configure_logging() -> None:
    level = os.environ.get("FEDTRUST_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def cmd_simulate(args) -> int:
    preset = ex.load_preset(args.preset) if args.preset else ex.load_config(args.config)
    if args.seed is not None:
        preset = preset.with_seed(args.seed)
    if args.weights:
        preset.weights = ex.load_weights(args.weights)
    if args.workers:
        preset.federation.workers = args.workers
    include = True if args.enable_discrimination_index else None
    log.info("simulating %s (seed %d)", preset.name, preset.federation.seed)
    stats, fs, report = ex.simulate(preset, include_discrimination=include)
    out = ex.write_artifacts(args.out, stats, fs, report)
    log.info("artifacts written to %s", out)
    sys.stdout.write(render(report, args.format))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    run_dir = Path(args.run) if args.run else None

    def pick(explicit, default_name):
        if explicit:
            return explicit
        if run_dir is None:
            raise InputError(f"missing --{default_name.split('.')[0]} (or --run DIR)")
        return run_dir / default_name

    weights = ex.load_weights(args.weights) if args.weights else None
    include = True if args.enable_discrimination_index else None
    report = ex.evaluate(
        pick(args.stats, ex.STATS_FILE),
        pick(args.factsheet, ex.FACTSHEET_FILE),
        pick(args.model, ex.MODEL_FILE),
        weights=weights,
        include_discrimination=include,
    )
    doc = render(report, args.format)
    if args.out:
        Path(args.out).write_text(doc)
    else:
        sys.stdout.write(doc)
    return EXIT_OK


def _load_report(path: str) -> Dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read report {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise InputError(f"{path} is not a report object")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise InputError(f"{path} has schema version {doc.get('schema_version')!r}, expected {SCHEMA_VERSION!r}")
    validate_report(doc)
    return doc


def compare_reports(a: Dict, b: Dict) -> List[Dict]:
    """Rows of (name, score in a, score in b, b - a) for each pillar and the global score."""
    rows = []
    for name in TAXONOMY:
        sa, sb = a["pillars"][name]["score"], b["pillars"][name]["score"]
        rows.append({"pillar": name, "a": sa, "b": sb, "delta": sb - sa})
    rows.append({"pillar": "global", "a": a["global_score"], "b": b["global_score"],
                 "delta": b["global_score"] - a["global_score"]})
    return rows


def cmd_compare(args) -> int:
    a, b = _load_report(args.report_a), _load_report(args.report_b)
    rows = compare_reports(a, b)
    if args.format == "json":
        sys.stdout.write(json.dumps({"a": args.report_a, "b": args.report_b, "rows": rows},
                                    indent=2, sort_keys=True) + "\n")
        return EXIT_OK
    head = f"{'pillar':<16}{'A':>8}{'B':>8}{'B-A':>9}"
    lines = [f"A = {args.report_a} ({a['preset']})", f"B = {args.report_b} ({b['preset']})", "", head, "-" * len(head)]
    for r in rows:
        title = PILLAR_TITLES.get(r["pillar"], r["pillar"].capitalize())
        lines.append(f"{title:<16}{r['a']:>8.2f}{r['b']:>8.2f}{r['delta']:>+9.2f}")
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedtrust", description="Federated learning trust evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a federation and score its trustworthiness")
    src = sim.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=ex.PRESETS)
    src.add_argument("--config", help="experiment config file (JSON or YAML)")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out", required=True, help="directory for run artifacts")
    sim.add_argument("--format", choices=("json", "text"), default="text")
    sim.add_argument("--weights", help="weights file (JSON or YAML)")
    sim.add_argument("--enable-discrimination-index", action="store_true")
    sim.add_argument("--workers", type=int, help="threads for local training")
    sim.set_defaults(func=cmd_simulate)

    ev = sub.add_parser("evaluate", help="recompute a report from saved run artifacts")
    ev.add_argument("--run", help="directory written by simulate")
    ev.add_argument("--stats")
    ev.add_argument("--factsheet")
    ev.add_argument("--model")
    ev.add_argument("--out", help="write the report here instead of stdout")
    ev.add_argument("--format", choices=("json", "text"), default="json")
    ev.add_argument("--weights")
    ev.add_argument("--enable-discrimination-index", action="store_true")
    ev.set_defaults(func=cmd_evaluate)

    cmp_ = sub.add_parser("compare", help="per-pillar deltas between two reports")
    cmp_.add_argument("report_a")
    cmp_.add_argument("report_b")
    cmp_.add_argument("--format", choices=("json", "text"), default="text")
    cmp_.set_defaults(func=cmd_compare)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
