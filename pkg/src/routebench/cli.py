"""Command-line entry points: run, analyze, recommend."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from routebench import SCHEMA_VERSIONS, __version__
from routebench.gateway import Gateway, load_simulator_profiles
from routebench.metrics import BOOTSTRAP_RESAMPLES, combo_metrics, taxonomy_counts
from routebench.pool import PoolError, load_pool
from routebench.profiles import MatrixConfig
from routebench.report import (
    DeploymentPolicy,
    ReportError,
    analyze_combos,
    expand_cell_means,
    recommend,
    recommendation_markdown,
    write_analysis,
    write_json,
)
from routebench.runner import LogError, read_log, run_matrix

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

_FILTER_KEYS = {"mode": "modes", "backend": "backends", "constraint": "constraints",
                "transport": "transports"}


class UsageError(Exception):
    pass


def _parse_filters(items: list[str]) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or key not in _FILTER_KEYS or not value:
            raise UsageError(f"bad --matrix-filter {item!r}; expected e.g. backend=gemini")
        out.setdefault(_FILTER_KEYS[key], []).extend(v.strip() for v in value.split(","))
    return out


def _version_text() -> str:
    lines = [f"routebench {__version__}"]
    lines += [f"  {name} schema v{v}" for name, v in SCHEMA_VERSIONS.items()]
    return "\n".join(lines)


def cmd_run(args: argparse.Namespace) -> int:
    cfg_path = Path(args.config)
    if not cfg_path.is_file():
        raise UsageError(f"config file not found: {cfg_path}")
    try:
        config = MatrixConfig.load(cfg_path)
        if args.matrix_filter:
            config = config.filtered(**_parse_filters(args.matrix_filter))
        pool = load_pool(args.pool, expected_size=config.requests_per_combo)
    except (ValueError, PoolError, TypeError) as exc:
        raise UsageError(str(exc)) from None

    if args.live:
        if not args.backends:
            raise UsageError("--live requires --backends <json config>")
        gateway = Gateway.live(json.loads(Path(args.backends).read_text()))
        kind = "live"
    else:
        gateway = Gateway.simulated(load_simulator_profiles(args.profiles), args.seed)
        kind = "simulated"

    out = Path(args.out)
    if out.exists() and not args.force:
        raise UsageError(f"{out} exists; outcome logs are append-only (use --force to replace)")
    out.parent.mkdir(parents=True, exist_ok=True)

    def progress(combo, rows):
        ok = sum(r.failure_class.value == "ok" for r in rows)
        print(f"[{combo.label()}] {ok}/{len(rows)} ok" + (" ABORTED" if rows and rows[0].aborted else ""))

    try:
        with open(out, "w") as fh:
            rows = run_matrix(config, pool, gateway, args.seed, out=fh, workers=args.workers,
                              gateway_kind=kind, on_combo=progress)
    finally:
        gateway.close()
    counts = taxonomy_counts(rows)
    print(f"wrote {len(rows)} rows to {out}")
    for name, n in counts.items():
        print(f"  {name:<18}{n}")
    return EXIT_OK


def _load_analysis_input(path: Path):
    """Outcome log (JSONL with header) or a ``cell_means`` JSON document."""
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        if isinstance(doc, dict) and doc.get("format") == "cell_means":
            return expand_cell_means(doc["cells"]), None
        if isinstance(doc, list):
            return doc, None
        raise UsageError(f"{path}: unrecognised JSON input")
    _, rows = read_log(path)
    if not rows:
        raise UsageError(f"{path}: log has no outcome rows")
    return [m.to_dict() for m in combo_metrics(rows)], taxonomy_counts(rows)


def cmd_analyze(args: argparse.Namespace) -> int:
    path = Path(args.input)
    if not path.is_file():
        raise UsageError(f"input not found: {path}")
    try:
        combos, taxonomy = _load_analysis_input(path)
    except LogError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_RUNTIME
    tables = analyze_combos(combos, taxonomy, resamples=args.resamples, seed=args.seed)
    written = write_analysis(tables, args.out)
    print(f"wrote {len(written)} files to {args.out}")
    for note in tables.notes:
        print(f"note: {note}")
    return EXIT_OK


def cmd_recommend(args: argparse.Namespace) -> int:
    cells_path = Path(args.tables) / "cell_metrics.json"
    if not cells_path.is_file():
        raise UsageError(f"{cells_path} not found; run `routebench analyze` first")
    try:
        policy = DeploymentPolicy.load(args.policy)
    except (OSError, ValueError, TypeError) as exc:
        raise UsageError(f"bad policy file: {exc}") from None
    result = recommend(json.loads(cells_path.read_text()), policy)
    if args.out:
        out = Path(args.out)
        write_json(out, result)
        out.with_suffix(".md").write_text(recommendation_markdown(result))
    print(recommendation_markdown(result))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="routebench", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=_version_text())
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute the factorial matrix and write an outcome log")
    run.add_argument("config", help="matrix config JSON")
    run.add_argument("--seed", type=int, default=0)
    src = run.add_mutually_exclusive_group()
    src.add_argument("--simulate", action="store_true", default=True,
                     help="use simulator backends (default)")
    src.add_argument("--live", action="store_true", help="call real HTTP backends")
    run.add_argument("--out", required=True, help="outcome log path (JSONL)")
    run.add_argument("--pool", help="prompt pool JSONL (default: shipped pool)")
    run.add_argument("--profiles", help="simulator profile JSON (default: shipped calibration)")
    run.add_argument("--backends", help="live backend config JSON")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--matrix-filter", action="append", default=[], metavar="FACTOR=LEVEL[,LEVEL]")
    run.add_argument("--force", action="store_true", help="replace an existing log")
    run.set_defaults(func=cmd_run)

    ana = sub.add_parser("analyze", help="compute metric, ANOVA, contrast and WLC tables")
    ana.add_argument("input", help="outcome log JSONL or cell_means JSON")
    ana.add_argument("--out", required=True, help="output directory")
    ana.add_argument("--seed", type=int, default=0, help="bootstrap seed")
    ana.add_argument("--resamples", type=int, default=BOOTSTRAP_RESAMPLES)
    ana.set_defaults(func=cmd_analyze)

    rec = sub.add_parser("recommend", help="backend-conditioned package selection")
    rec.add_argument("tables", help="directory written by `analyze`")
    rec.add_argument("policy", help="deployment policy JSON")
    rec.add_argument("--out", help="write the verdict JSON (and a .md twin) here")
    rec.set_defaults(func=cmd_recommend)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"routebench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ReportError, LogError, RuntimeError, OSError) as exc:
        print(f"routebench: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
