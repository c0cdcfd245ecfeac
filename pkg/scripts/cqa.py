#!/usr/bin/env python3
"""
Complex Query Answering Command Line

One subcommand per pipeline stage:

    make-toy         write a synthetic typed dataset
    load             load a dataset and print its statistics (optionally export it)
    build-typegraph  derive the relation type graph (JSON / DOT)
    gen-queries      sample queries with exact answers for a regime and split
    train            train the host model, with or without TEMP
    eval             evaluate a checkpoint on a query file
    answer           exact answers of one query
    report           render evaluation reports (and baseline-vs-TEMP comparisons)

Run `python scripts/cqa.py <subcommand> --help` for the flags of each stage.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

sys.path.append(str(Path(__file__).parent.parent))
from scripts.generate_report import ReportGenerator  # noqa: E402
from tools.temp_cqa import config as run_config  # noqa: E402
from tools.temp_cqa import numcore  # noqa: E402
from tools.temp_cqa.errors import TempCqaError  # noqa: E402
from tools.temp_cqa.evaluate import run_regime  # noqa: E402
from tools.temp_cqa.kg import load_kg, load_splits, save_kg  # noqa: E402
from tools.temp_cqa.qe import TEMP_MODES, QueryEmbeddingModel  # noqa: E402
from tools.temp_cqa.querydag import (REGIMES, SPLITS, STRUCTURES, QueryDAG, QuerySet,  # noqa: E402
                                     answer_query, generate_queries, load_queries,
                                     serialize_queries)
from tools.temp_cqa.synthetic import write_toy_dataset  # noqa: E402
from tools.temp_cqa.temp import AGGREGATORS, FUSIONS  # noqa: E402
from tools.temp_cqa.train import train  # noqa: E402
from tools.temp_cqa.typegraph import build_type_graph  # noqa: E402

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
LOG_DATEFMT = '%Y-%m-%d %H:%M:%S'


def configure_logging(verbose=False, quiet=False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, datefmt=LOG_DATEFMT, force=True)


def load_graph(args):
    """Single graph from --triples/--types, or one split of the --data directory."""
    if getattr(args, 'triples', None):
        if not args.types:
            raise TempCqaError("--triples needs --types")
        return load_kg(args.triples, args.types)
    if not args.data:
        raise TempCqaError("either --data or --triples/--types is required")
    return load_splits(args.data).graph(args.split)


# ---------------------------------------------------------------------------
# subcommands

def cmd_make_toy(args):
    seed = run_config.load_config(overrides={'seed': args.seed})['seed']
    directory = write_toy_dataset(args.output, num_entities=args.entities, num_relations=args.relations,
                                  num_types=args.types, out_degree=args.out_degree, holdout=args.holdout,
                                  inductive=args.inductive, seed=seed)
    print(f"Toy dataset written to {directory}")
    return 0


def cmd_load(args):
    if args.triples:
        graph = load_graph(args)
        print(json.dumps(graph.describe(), indent=2))
        if args.export:
            save_kg(graph, args.export)
            print(f"Exported {graph.name} to {args.export}")
        return 0

    splits = load_splits(args.data)
    summary = splits.describe()
    print(f"Dataset: {args.data} (inductive={summary['inductive']})")
    for split, stats in summary['splits'].items():
        print(f"  {split:<6} entities={stats['active_entities']:<6} relations={stats['relations']:<4} "
              f"types={stats['types']:<4} assertions={stats['relation_assertions']:<7} "
              f"type_assertions={stats['type_assertions']}")
    if args.export:
        for split in SPLITS:
            save_kg(splits.graph(split), Path(args.export) / split)
        print(f"Exported splits to {args.export}")
    return 0


def cmd_build_typegraph(args):
    graph = load_graph(args)
    tg = build_type_graph(graph)
    if args.output:
        tg.save_json(args.output)
        print(f"Type graph saved: {args.output}")
    if args.dot:
        Path(args.dot).parent.mkdir(parents=True, exist_ok=True)
        Path(args.dot).write_text(tg.to_dot(), encoding='utf-8')
        print(f"DOT rendering saved: {args.dot}")
    print(f"{len(tg.nodes)} types, {len(tg.edges)} relations, "
          f"{len(tg.fallback_relations())} relations with UNKNOWN fallback")
    if not args.output and not args.dot:
        print(tg.to_json())
    return 0


def cmd_gen_queries(args):
    seed = run_config.load_config(overrides={'seed': args.seed})['seed']
    splits = load_splits(args.data)
    queries = QuerySet(regime=args.regime, split=args.split)
    for offset, structure in enumerate(args.structure):
        queries = queries.extend(generate_queries(splits, structure, args.count, args.regime, seed + offset,
                                                  split=args.split, max_answers=args.max_answers))
    serialize_queries(queries, args.output)
    counts = ', '.join(f"{s}={n}" for s, n in queries.per_structure_counts().items())
    print(f"{len(queries)} queries ({counts}) saved to {args.output}")
    return 0


def _settings(args):
    overrides = {key: getattr(args, key, None) for key in run_config.DEFAULTS}
    return run_config.load_config(args.config, overrides)


def cmd_train(args):
    settings = _settings(args)
    model_config = run_config.model_config(settings)
    train_config = run_config.train_config(settings)
    splits = load_splits(args.data)
    queries = load_queries(args.queries)
    run_config.save_config(settings, Path(args.output) / 'config.json')

    result = train(splits, queries, train_config, model_config, args.output)
    print(f"Checkpoint: {result.checkpoint}")
    print(f"sha256: {result.digest}")
    print(f"Loss: {result.initial_loss:.4f} -> {result.final_loss:.4f} over {len(result.loss_curve)} steps")
    return 0


def cmd_eval(args):
    model, extra = QueryEmbeddingModel.load(args.checkpoint)
    splits = load_splits(args.data)
    queries = load_queries(args.queries)
    regime = args.regime or queries.regime or model.regime or 'generalization'
    echo = {
        'train': extra.get('train_config', {}),
        'checkpoint_sha256': numcore.checkpoint_digest(args.checkpoint),
    }
    report = run_regime(regime, splits, model, queries, config=echo)
    if args.output:
        report.save(args.output)
    print(report.text_table())
    return 0


def cmd_answer(args):
    graph = load_graph(args)
    anchors = [graph.entity_id(name) for name in args.anchor]
    relations = [graph.relation_id(name) for name in args.relation]
    query = QueryDAG(args.structure, anchors, relations)
    for e in sorted(answer_query(graph, query), key=graph.entity_vocab.name):
        print(graph.entity_vocab.name(e))
    return 0


def cmd_report(args):
    if args.compare and len(args.reports) < 2:
        raise TempCqaError("--compare needs a baseline report and at least one more")
    generator = ReportGenerator(args.reports, args.output or "reports", args.labels)
    if args.compare:
        print(generator.comparison_table().to_string())
    else:
        print(generator.text())
    if args.output:
        for kind, path in generator.generate_all_formats(args.loss_curves).items():
            print(f"{kind} saved: {path}")
    return 0


# ---------------------------------------------------------------------------
# parser

def _add_graph_source(parser, default_split='test'):
    parser.add_argument('-d', '--data', help='Dataset directory (train.txt, valid.txt, test.txt, types.txt)')
    parser.add_argument('--split', choices=SPLITS, default=default_split,
                        help=f'Split graph to use (default: {default_split})')
    parser.add_argument('--triples', help='Single triples file instead of a dataset directory')
    parser.add_argument('--types', help='Entity/type file that goes with --triples')


def _add_run_settings(parser):
    parser.add_argument('-c', '--config', help='JSON config file')
    parser.add_argument('--seed', type=int, help='Random seed (default: $TEMP_CQA_SEED, config, then 0)')
    parser.add_argument('--regime', choices=REGIMES)
    parser.add_argument('--dim', type=int)
    parser.add_argument('--temp', choices=TEMP_MODES, help='TEMP components to enable')
    parser.add_argument('--highway-k', dest='highway_k', type=int)
    parser.add_argument('--aggregator', dest='entity_aggregator', choices=AGGREGATORS)
    parser.add_argument('--fusion', choices=FUSIONS)
    parser.add_argument('--inductive', action='store_true', default=None)
    parser.add_argument('--margin', type=float)
    parser.add_argument('--negatives', dest='negative_samples', type=int)
    parser.add_argument('--lr', type=float)
    parser.add_argument('--batch-size', dest='batch_size', type=int)
    parser.add_argument('--steps', type=int)
    parser.add_argument('--log-every', dest='log_every', type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog='cqa', description='Type-aware complex query answering')
    parser.add_argument('-v', '--verbose', action='store_true', help='Debug logging')
    parser.add_argument('-q', '--quiet', action='store_true', help='Warnings and errors only')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('make-toy', help='Write a synthetic typed dataset')
    p.add_argument('-o', '--output', required=True, help='Output dataset directory')
    p.add_argument('--entities', type=int, default=20)
    p.add_argument('--relations', type=int, default=3)
    p.add_argument('--types', type=int, default=4)
    p.add_argument('--out-degree', type=int, default=2)
    p.add_argument('--holdout', type=float, default=0.2, help='Held-out share of edges (or entities)')
    p.add_argument('--inductive', action='store_true', help='Hold out entities instead of edges')
    p.add_argument('--seed', type=int)
    p.set_defaults(func=cmd_make_toy)

    p = sub.add_parser('load', help='Load a dataset and print statistics')
    _add_graph_source(p)
    p.add_argument('--export', help='Write TSV + JSON vocabulary copies to this directory')
    p.set_defaults(func=cmd_load)

    p = sub.add_parser('build-typegraph', help='Derive the relation type graph')
    _add_graph_source(p, default_split='train')
    p.add_argument('-o', '--output', help='JSON output file')
    p.add_argument('--dot', help='Graphviz DOT output file')
    p.set_defaults(func=cmd_build_typegraph)

    p = sub.add_parser('gen-queries', help='Sample queries with exact answers')
    p.add_argument('-d', '--data', required=True, help='Dataset directory')
    p.add_argument('-s', '--structure', nargs='+', choices=STRUCTURES, required=True)
    p.add_argument('-n', '--count', type=int, required=True, help='Queries per structure')
    p.add_argument('--regime', choices=REGIMES, default='generalization')
    p.add_argument('--split', choices=SPLITS, default='test')
    p.add_argument('--max-answers', type=int, help='Skip queries with more answers than this')
    p.add_argument('--seed', type=int)
    p.add_argument('-o', '--output', required=True, help='JSON lines output file')
    p.set_defaults(func=cmd_gen_queries)

    p = sub.add_parser('train', help='Train a model')
    p.add_argument('-d', '--data', required=True, help='Dataset directory')
    p.add_argument('--queries', required=True, help='Training queries (JSON lines)')
    p.add_argument('-o', '--output', required=True, help='Run directory')
    _add_run_settings(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('eval', help='Evaluate a checkpoint')
    p.add_argument('-d', '--data', required=True, help='Dataset directory')
    p.add_argument('--checkpoint', required=True, help='Checkpoint directory')
    p.add_argument('--queries', required=True, help='Evaluation queries (JSON lines)')
    p.add_argument('--regime', choices=REGIMES)
    p.add_argument('-o', '--output', help='EvalReport JSON output file')
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('answer', help='Exact answers of one query')
    _add_graph_source(p)
    p.add_argument('-s', '--structure', choices=STRUCTURES, required=True)
    p.add_argument('-a', '--anchor', action='append', required=True, help='Anchor entity name (repeatable)')
    p.add_argument('-r', '--relation', action='append', required=True, help='Relation name (repeatable)')
    p.set_defaults(func=cmd_answer)

    p = sub.add_parser('report', help='Render evaluation reports')
    p.add_argument('reports', nargs='+', help='EvalReport JSON files (first one is the baseline)')
    p.add_argument('--compare', action='store_true', help='Per-structure MRR comparison with deltas')
    p.add_argument('-l', '--labels', nargs='+', help='Run labels, one per report')
    p.add_argument('--loss-curves', nargs='+', default=[], help='loss_curve.csv files to chart')
    p.add_argument('-o', '--output', help='Directory for text/Markdown/HTML renderings')
    p.set_defaults(func=cmd_report)
    return parser


def cli(argv=None):
    """Run one subcommand; returns the process exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    configure_logging(args.verbose, args.quiet)
    try:
        return args.func(args)
    except (TempCqaError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli())


if __name__ == "__main__":
    main()
