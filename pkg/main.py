#!/usr/bin/env python3
"""
Scene Graph Forge - Main Entry Point
Command-line surface for taxonomy building, structure enumeration, caption
generation and score analysis
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import config
from analysis import (BREAKDOWN_KEYS, compare_models, complexity_breakdown, gap_ranking, ingest_candidates,
                      ingest_scores, percentile_buckets, rollup, select_best_per_group, select_multi_object,
                      select_random_fraction, select_random_per_group, select_top_fraction, write_rows)
from catalog import ScopeSpec, counts, load_catalog, scope_filter
from enumerator import EnumerationLimits, ensure_store, load_store, save_store
from pipeline import (GenerationConfig, attach_properties, emit_jsonl, filter_records, generate_dataset,
                      load_config, preset, read_jsonl, required_complexities)
from sampler import load_seed_graph
from taxonomy import build_taxonomy, load_taxonomy, save_taxonomy, validate
from utils import SceneGraphError, UsageError

logger = logging.getLogger(__name__)


def setup_logging(level: str = config.LOG_LEVEL):
    """Configure root logging once: stream handler plus optional log file"""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if config.LOG_TO_FILE:
        log_dir = Path(config.LOG_DIR)
        log_dir.mkdir(exist_ok=True)
        handlers.append(logging.FileHandler(log_dir / config.LOG_FILE, encoding="utf-8"))
    logging.basicConfig(level=level, format=config.LOG_FORMAT, handlers=handlers)
    logging.getLogger().setLevel(level)


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _parse_range(text: str) -> List[int]:
    """"3-12" or "3,5,7" or "4" -> sorted integers"""
    values = set()
    try:
        for part in text.split(","):
            if "-" in part:
                lo, hi = (int(x) for x in part.split("-", 1))
                values.update(range(lo, hi + 1))
            else:
                values.add(int(part))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"invalid complexity list {text!r}") from e
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError(f"complexities must be positive: {text!r}")
    return sorted(values)


def _store_dir(args) -> Path:
    return Path(args.store_dir or os.environ.get(config.STORE_DIR_ENV, config.DEFAULT_STORE_DIR))


def _limits(args) -> EnumerationLimits:
    return EnumerationLimits(max_objects=args.max_objects, max_edges=args.max_edges,
                             max_attrs_per_object=args.max_attrs)


def _write_rows(rows, path, columns):
    write_rows([r if isinstance(r, dict) else r.to_dict() for r in rows], path, columns)


# SUBCOMMANDS

def cmd_taxonomy_build(args) -> int:
    taxonomy = build_taxonomy(args.edges, (args.root_lemma, args.root_sense), args.vocab)
    report = taxonomy.report
    save_taxonomy(taxonomy, args.out)
    logger.info(f"Taxonomy: {len(taxonomy)} nodes, {taxonomy.edge_count} edges, {len(taxonomy.roots)} roots")
    if report is not None:
        logger.info(f"Build: {report.secondary_parents_dropped} secondary parents dropped, "
                    f"{len(report.collapsed_senses)} senses collapsed, {report.unreachable} unreachable")
    return 0


def cmd_taxonomy_validate(args) -> int:
    taxonomy = load_taxonomy(args.taxonomy)
    report = validate(taxonomy, config.TABLE_COUNTS if args.declared_counts else None)
    for category, n in report.counts_by_category.items():
        print(f"{category}\t{n}")
    for violation in report.violations:
        logger.error(f"Violation: {violation}")
    return 0 if report.ok else 2


def _load_view(args):
    taxonomy = load_taxonomy(args.taxonomy)
    catalog = load_catalog(taxonomy, args.catalog, config.TABLE_COUNTS if args.declared_counts else None)
    return taxonomy, catalog


def cmd_catalog_validate(args) -> int:
    _, catalog = _load_view(args)
    scope = ScopeSpec.from_dict(_read_json(args.scope)) if args.scope else ScopeSpec()
    for key, n in counts(scope_filter(catalog, scope)).items():
        print(f"{key}\t{n}")
    return 0


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read JSON from {path}: {e}") from e


def cmd_enumerate(args) -> int:
    directory = _store_dir(args)
    store = load_store(directory, [] if args.force else args.complexity, _limits(args))
    store = ensure_store(store, args.complexity, _limits(args), args.workers)
    for path in save_store(store, directory):
        logger.info(f"Stored {path}")
    for c in args.complexity:
        print(f"{c}\t{len(store.by_complexity[c])}")
    return 0


def cmd_generate(args) -> int:
    overrides = {
        "count": args.count,
        "workers": args.workers,
        "focus_concepts": args.focus,
        "seed_graph": args.seed_graph,
        "templates": args.templates,
        "stratified": True if args.stratified else None,
    }
    if args.config:
        base = load_config(args.config, args.seed).to_dict()
        base.update({k: v for k, v in overrides.items() if v is not None})
        gen_config = GenerationConfig.from_dict(base)
    else:
        if args.preset == "paper-hard-concepts" and not args.focus:
            raise UsageError("preset paper-hard-concepts needs --focus concept ids")
        gen_config = preset(args.preset, args.seed, **overrides)

    out = args.out or gen_config.output_path
    if not out:
        raise UsageError("generate needs --out or output_path in the config")

    _, catalog = _load_view(args)
    directory = _store_dir(args)
    seed = load_seed_graph(gen_config.seed_graph) if gen_config.seed_graph else None
    needed = required_complexities(gen_config, seed)
    store = load_store(directory, needed, EnumerationLimits())
    missing = [c for c in needed if c not in store.by_complexity]
    if missing:
        logger.info(f"Enumerating missing complexities {missing} into {directory}")
        store = ensure_store(store, missing, EnumerationLimits(), gen_config.workers)
        save_store(store, directory)

    records = generate_dataset(gen_config, store, catalog)
    emit_jsonl(records, out)
    return 0


def cmd_attach(args) -> int:
    records, unknown = attach_properties(read_jsonl(args.dataset), args.scores)
    emit_jsonl(records, args.out)
    if unknown:
        logger.warning(f"{len(unknown)} unknown caption ids in {args.scores}")
    return 0


def cmd_filter(args) -> int:
    records = filter_records(read_jsonl(args.dataset), args.property, args.min, args.max,
                             tuple(args.percentile) if args.percentile else None)
    emit_jsonl(records, args.out)
    return 0


def _analysis_inputs(args):
    return read_jsonl(args.dataset), ingest_scores(args.scores)


def cmd_analyze_rollup(args) -> int:
    records, table = _analysis_inputs(args)
    taxonomy = load_taxonomy(args.taxonomy)
    rows = []
    for node in args.node:
        score = rollup(table, records, taxonomy, node, args.model, args.metric)
        rows.append({"node": node, "mean": score.mean, "n": score.n})
    _write_rows(rows, args.out, ["node", "mean", "n"])
    return 0


def cmd_analyze_compare(args) -> int:
    records, table = _analysis_inputs(args)
    taxonomy = load_taxonomy(args.taxonomy)
    rows = compare_models(table, records, taxonomy, args.model_a, args.model_b, args.metric, args.node)
    _write_rows(rows, args.out, ["node", "mean_a", "mean_b", "delta", "n", "no_coverage"])
    return 0


def cmd_analyze_gaps(args) -> int:
    records, table = _analysis_inputs(args)
    taxonomy = load_taxonomy(args.taxonomy) if args.taxonomy else None
    report = gap_ranking(table, records, taxonomy, args.model_a, args.model_b, args.metric,
                         args.k, args.min_support, args.through_taxonomy)
    _write_rows(report.rows, args.out, ["concept_id", "mean_a", "mean_b", "gap", "n_a", "n_b"])
    return 0


def cmd_analyze_buckets(args) -> int:
    records, table = _analysis_inputs(args)
    rows = percentile_buckets(records, table, args.model, args.metric, args.property, args.buckets)
    _write_rows(rows, args.out,
                ["bucket", "percentile_lo", "percentile_hi", "value_lo", "value_hi", "mean", "n", "empty"])
    return 0


def cmd_analyze_complexity(args) -> int:
    records, table = _analysis_inputs(args)
    rows = complexity_breakdown(table, records, args.model, args.metric, args.by)
    _write_rows(rows, args.out, [args.by, "mean", "n"])
    return 0


def cmd_select_best(args) -> int:
    winners = select_best_per_group(ingest_candidates(args.candidates))
    _write_rows([{"caption_id": c, "candidate_id": w} for c, w in winners.items()],
                args.out, ["caption_id", "candidate_id"])
    return 0


def cmd_select_top(args) -> int:
    scores = ingest_scores(args.scores).require(args.model, args.metric)
    chosen = select_top_fraction(scores, args.fraction)
    _write_rows([{"caption_id": c, "score": s} for c, s in chosen], args.out, ["caption_id", "score"])
    return 0


def cmd_select_random(args) -> int:
    if bool(args.candidates) == bool(args.scores):
        raise UsageError("select random needs exactly one of --candidates or --scores")
    if args.candidates:
        winners = select_random_per_group(ingest_candidates(args.candidates), args.seed)
        _write_rows([{"caption_id": c, "candidate_id": w} for c, w in winners.items()],
                    args.out, ["caption_id", "candidate_id"])
        return 0
    if not (args.model and args.metric):
        raise UsageError("select random --scores needs --model and --metric")
    scores = ingest_scores(args.scores).require(args.model, args.metric)
    chosen = select_random_fraction(scores, args.seed, args.fraction)
    _write_rows([{"caption_id": c, "score": s} for c, s in chosen], args.out, ["caption_id", "score"])
    return 0


def cmd_select_multi_object(args) -> int:
    emit_jsonl(select_multi_object(read_jsonl(args.dataset), args.min_objects), args.out)
    return 0


# PARSER

def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value <= config.MAX_SEED:
        raise argparse.ArgumentTypeError(f"seed must be in [0, 2^64 - 1], got {text}")
    return value


def _add_catalog_args(parser):
    parser.add_argument("--taxonomy", required=True, help="Taxonomy JSON from 'taxonomy build'")
    parser.add_argument("--catalog", required=True, nargs="+", help="Catalog JSON files")
    parser.add_argument("--declared-counts", action="store_true", help="Compare kind totals with the full release")


def _add_analysis_args(parser, model_pair: bool = False, needs_taxonomy: bool = False):
    parser.add_argument("--dataset", required=True, help="Dataset JSONL")
    parser.add_argument("--scores", required=True, help="Score CSV caption_id,model_id,metric_id,value")
    if model_pair:
        parser.add_argument("--model-a", required=True)
        parser.add_argument("--model-b", required=True)
    else:
        parser.add_argument("--model", required=True)
    parser.add_argument("--metric", required=True)
    if needs_taxonomy:
        parser.add_argument("--taxonomy", required=True)
    parser.add_argument("--out", required=True, help="Output CSV")


def build_parser() -> CliParser:
    parser = CliParser(prog="scene-graph-forge", description="Scene-graph based caption generation and analysis")
    parser.add_argument("--log-level", default=config.LOG_LEVEL, choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    commands = parser.add_subparsers(dest="command", required=True)

    taxonomy = commands.add_parser("taxonomy", help="Build or validate a taxonomy")
    taxonomy_cmds = taxonomy.add_subparsers(dest="action", required=True)
    p = taxonomy_cmds.add_parser("build", help="Build a taxonomy from sense edges and vocabulary")
    p.add_argument("--edges", required=True, help="TSV child_lemma, child_sense, parent_lemma, parent_sense[, tags]")
    p.add_argument("--vocab", help="TSV lemma, sense, category[, tags] for flat kinds")
    p.add_argument("--root-lemma", default=config.DEFAULT_ROOT[0])
    p.add_argument("--root-sense", default=config.DEFAULT_ROOT[1])
    p.add_argument("--out", required=True, help="Taxonomy JSON")
    p.set_defaults(func=cmd_taxonomy_build)
    p = taxonomy_cmds.add_parser("validate", help="Check taxonomy invariants")
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--declared-counts", action="store_true")
    p.set_defaults(func=cmd_taxonomy_validate)

    catalog = commands.add_parser("catalog", help="Catalog checks")
    catalog_cmds = catalog.add_subparsers(dest="action", required=True)
    p = catalog_cmds.add_parser("validate", help="Resolve catalogs and print scoped counts")
    _add_catalog_args(p)
    p.add_argument("--scope", help="ScopeSpec JSON")
    p.set_defaults(func=cmd_catalog_validate)

    p = commands.add_parser("enumerate", help="Enumerate structure templates into the store")
    p.add_argument("--complexity", required=True, type=_parse_range, help='e.g. "3-12" or "1,2,3"')
    p.add_argument("--store-dir", help=f"Defaults to ${config.STORE_DIR_ENV} or {config.DEFAULT_STORE_DIR}")
    p.add_argument("--max-objects", type=int)
    p.add_argument("--max-edges", type=int)
    p.add_argument("--max-attrs", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--force", action="store_true", help="Re-enumerate complexities already stored")
    p.set_defaults(func=cmd_enumerate)

    p = commands.add_parser("generate", help="Generate a caption dataset")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", help="GenerationConfig JSON")
    source.add_argument("--preset", choices=sorted(config.PRESETS))
    p.add_argument("--seed", required=True, type=_seed, help="Master seed")
    p.add_argument("--out", help="Dataset JSONL")
    _add_catalog_args(p)
    p.add_argument("--store-dir")
    p.add_argument("--count", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--focus", nargs="+", help="Object concept ids injected into every caption")
    p.add_argument("--seed-graph", help="Seed scene graph JSON to expand")
    p.add_argument("--templates", help="Realization template JSON")
    p.add_argument("--stratified", action="store_true", help="Cycle complexities instead of drawing them")
    p.set_defaults(func=cmd_generate)

    p = commands.add_parser("attach", help="Attach per-caption properties")
    p.add_argument("--dataset", required=True)
    p.add_argument("--scores", required=True, help="CSV caption_id,property,value")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attach)

    p = commands.add_parser("filter", help="Filter records on a property")
    p.add_argument("--dataset", required=True)
    p.add_argument("--property", required=True)
    p.add_argument("--min", type=float)
    p.add_argument("--max", type=float)
    p.add_argument("--percentile", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filter)

    analyze = commands.add_parser("analyze", help="Score analyses")
    analyze_cmds = analyze.add_subparsers(dest="action", required=True)
    p = analyze_cmds.add_parser("rollup", help="Mean score per taxonomy node")
    _add_analysis_args(p, needs_taxonomy=True)
    p.add_argument("--node", required=True, nargs="+")
    p.set_defaults(func=cmd_analyze_rollup)
    p = analyze_cmds.add_parser("compare", help="Pairwise model comparison per node")
    _add_analysis_args(p, model_pair=True, needs_taxonomy=True)
    p.add_argument("--node", required=True, nargs="+")
    p.set_defaults(func=cmd_analyze_compare)
    p = analyze_cmds.add_parser("gaps", help="Concepts with the largest gap to a reference model")
    _add_analysis_args(p, model_pair=True)
    p.add_argument("--taxonomy", help="Needed with --through-taxonomy")
    p.add_argument("--k", type=int, default=config.DEFAULT_GAP_K)
    p.add_argument("--min-support", type=int, default=config.DEFAULT_MIN_SUPPORT)
    p.add_argument("--through-taxonomy", action="store_true")
    p.set_defaults(func=cmd_analyze_gaps)
    p = analyze_cmds.add_parser("buckets", help="Mean score per property percentile bucket")
    _add_analysis_args(p)
    p.add_argument("--property", required=True)
    p.add_argument("--buckets", type=int, default=4)
    p.set_defaults(func=cmd_analyze_buckets)
    p = analyze_cmds.add_parser("complexity", help="Mean score per complexity or element count")
    _add_analysis_args(p)
    p.add_argument("--by", choices=BREAKDOWN_KEYS, default="complexity")
    p.set_defaults(func=cmd_analyze_complexity)

    select = commands.add_parser("select", help="Training data selection")
    select_cmds = select.add_subparsers(dest="action", required=True)
    p = select_cmds.add_parser("best", help="Best candidate per caption")
    p.add_argument("--candidates", required=True, help="CSV caption_id,candidate_id,score")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select_best)
    p = select_cmds.add_parser("top", help="Top-scoring fraction of captions")
    p.add_argument("--scores", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--metric", required=True)
    p.add_argument("--fraction", type=float, default=config.TOP_FRACTION)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select_top)
    p = select_cmds.add_parser("random", help="Seeded random selection baseline")
    p.add_argument("--candidates")
    p.add_argument("--scores")
    p.add_argument("--model")
    p.add_argument("--metric")
    p.add_argument("--fraction", type=float, default=config.TOP_FRACTION)
    p.add_argument("--seed", required=True, type=_seed)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select_random)
    p = select_cmds.add_parser("multi-object", help="Captions with several objects")
    p.add_argument("--dataset", required=True)
    p.add_argument("--min-objects", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select_multi_object)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments and dispatch one subcommand

    Returns:
        0 on success, 1 on usage errors, 2 on data errors, 3 on internal errors
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return e.exit_code
    except SystemExit as e:
        # --help
        return int(e.code or 0)

    setup_logging(args.log_level)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return e.exit_code
    except SceneGraphError as e:
        notes = "; ".join(getattr(e, "__notes__", ()))
        logger.error(f"{type(e).__name__}: {e}" + (f" ({notes})" if notes else ""))
        return e.exit_code
    except Exception as e:
        logger.exception(f"Internal error: {e}")
        return 3


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
