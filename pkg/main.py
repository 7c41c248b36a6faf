#!/usr/bin/env python3
"""
ClickCFA - Main Entry Point

This script provides a unified interface to the ClickCFA pipeline: synthetic
corpus generation, log parsing, pre-training, training, cross-validated
evaluation, the meta-usage sweep, cluster / n-gram analytics and diagnostics.
"""

import os
import sys
import logging
import argparse
from typing import Any, Dict, Optional

from assets.config_manager import ConfigManager, PRESETS, TrainRecipe, write_flat_config
from assets.data_io import (
    carve_meta,
    corpus_summary,
    default_archetypes,
    generate_synthetic,
    load_archetypes,
    parse_log,
    serialize_corpus,
    split_folds,
)
from assets.clickstream import compute_cfa
from assets.clustering import build_meta_clusters
from assets.diagnostic import main as diagnostic_main
from assets.errors import ClickCFAError, UsageError
from assets.evaluation import (
    DEFAULT_FRACTIONS,
    FOLD_HEADER,
    TABLE_HEADER,
    EvalReport,
    comparison_table,
    cross_validate,
    gram_analytics,
    meta_usage_sweep,
    recipe_grid,
    run_method,
)
from assets.neural import ParamStore
from assets.pretrain import expand_corpus, pretrain
from assets.utilities import (
    fingerprint,
    fold_hash,
    format_table,
    get_output_root,
    make_run_dir,
    seed_everything,
    setup_logging,
    show_full_version,
    show_logo,
    show_version,
    write_csv,
)

logger = logging.getLogger('clickcfa-main')

PIPELINE_COMMANDS = ("generate", "parse", "pretrain", "train", "evaluate", "sweep", "analyze")
CORPUS_COMMANDS = ("pretrain", "train", "evaluate", "sweep", "analyze")

# command arguments that config files and profiles may fill, with their types
ARG_TYPES = {
    "archetypes": str, "n": int, "n_videos": int, "out": str, "dataset": str, "input": str,
    "corpus": str, "test_fold": int, "pretrained": str, "fractions": str, "gram": int, "top": int,
}
COMMAND_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "generate": {"n": 2000, "n_videos": 20, "dataset": "synthetic"},
    "train": {"test_fold": 0},
    "sweep": {"fractions": ",".join(str(f) for f in DEFAULT_FRACTIONS)},
    "analyze": {"test_fold": 0, "gram": 4, "top": 10},
}
COMMAND_RECIPES = {"sweep": "pre-gru-meta-c2", "analyze": "gru-meta-c2"}


class ClickCFAArgumentParser(argparse.ArgumentParser):
    """Argument parser that reports bad usage as UsageError (exit code 1)."""

    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(message)


def add_recipe_arguments(parser: argparse.ArgumentParser) -> None:
    """Recipe selection, configuration sources and per-field overrides."""
    group = parser.add_argument_group('recipe')
    group.add_argument('--recipe', help=f"Recipe preset ({', '.join(PRESETS)}; 'all' for evaluate)")
    group.add_argument('--config', help='Flat key = value configuration file')
    group.add_argument('--profile', help='Load a saved profile')
    group.add_argument('--save-profile', help='Save the given overrides as a named profile')
    group.add_argument('--list-profiles', action='store_true', help='List saved profiles and exit')
    group.add_argument('--seed', type=int, help='Seed of folds, splits, initialisation and batching')
    group.add_argument('--model', choices=["gru", "cnn", "ngram3", "ngram4"], help='Model family')
    group.add_argument('--epochs', type=int, help='Training epochs (T)')
    group.add_argument('--lr', type=float, help='Learning rate (alpha)')
    group.add_argument('--meta-lr', type=float, help='Weighting-network learning rate (beta)')
    group.add_argument('--batch-size', type=int, help='Training batch size')
    group.add_argument('--meta-batch-size', type=int, help='Meta batch size')
    group.add_argument('--hidden-dim', type=int, help='GRU hidden size (k)')
    group.add_argument('--meta-fraction', type=float, help='Share of the training sessions carved off as D_meta')
    group.add_argument('--criterion', choices=["none", "C1", "C2"], help='Clustering criterion')
    group.add_argument('--n-clusters', type=int, help='Fixed cluster count (0 selects by silhouette)')
    group.add_argument('--k-min', type=int, help='Smallest cluster count tried')
    group.add_argument('--k-max', type=int, help='Largest cluster count tried')
    group.add_argument('--pretrain-epochs', type=int, help='Pre-training epochs')
    group.add_argument('--pretrain-lr', type=float, help='Pre-training learning rate')
    group.add_argument('--folds', type=int, help='Cross-validation folds')
    group.add_argument('--skip-tolerance', type=float, help='Seconds a position may drift before a click counts as a skip')
    group.add_argument('--meta-cadence', choices=["batch", "epoch"], help='How often the weighting network is updated')
    group.add_argument('--weighting-init', choices=["uniform", "zeros"], help='Weighting-network initialisation')
    group.add_argument('--positive-class', type=int, choices=[0, 1], help='Label treated as positive by F1')
    group.add_argument('--stratify', action='store_const', const=True, help='Stratify folds by CFA label')
    group.add_argument('--gap-marker', action='store_const', const=True, help='Insert a gap row where the held-out click was')
    group.add_argument('--standardize-meta-losses', action='store_const', const=True,
                       help='Standardise losses before the weighting network')


def create_parser():
    # Display the logo when the program starts
    print(show_logo(small=True))

    parser = ClickCFAArgumentParser(description="ClickCFA - Correct-on-First-Attempt prediction from clickstreams")
    subparsers = parser.add_subparsers(dest='command', help='Command to run')

    # Version Command
    parser.add_argument('--version', action='store_true', help='Show version information')
    parser.add_argument('--full-version', action='store_true', help='Show detailed version information')

    common = ClickCFAArgumentParser(add_help=False)
    common.add_argument('--log-level', default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="Logging level")
    common.add_argument('--output-root', help='Directory for run directories (default $CLICKCFA_OUTPUT_ROOT or ./runs)')
    add_recipe_arguments(common)

    # Generate Command
    generate_parser = subparsers.add_parser('generate', parents=[common], help='Generate a synthetic corpus')
    generate_parser.add_argument('--archetypes', help='Archetype file (default: built-in watcher/skimmer)')
    generate_parser.add_argument('--n', type=int, help='Number of sessions (default 2000)')
    generate_parser.add_argument('--n-videos', type=int, help='Number of videos (default 20)')
    generate_parser.add_argument('--dataset', help='Dataset name (default synthetic)')
    generate_parser.add_argument('--out', help='Also write the corpus to this path')

    # Parse Command
    parse_parser = subparsers.add_parser('parse', parents=[common], help='Parse a raw player log into a corpus')
    parse_parser.add_argument('--input', help='Raw log file')
    parse_parser.add_argument('--dataset', help='Dataset name (default: file header or file name)')
    parse_parser.add_argument('--out', help='Also write the parsed corpus to this path')

    # Pretrain Command
    pretrain_parser = subparsers.add_parser('pretrain', parents=[common], help='Leave-one-out GRU pre-training')
    pretrain_parser.add_argument('--corpus', help='Corpus file')
    pretrain_parser.add_argument('--test-fold', type=int, help='Exclude this fold from pre-training')

    # Train Command
    train_parser = subparsers.add_parser('train', parents=[common], help='Train one recipe on one fold split')
    train_parser.add_argument('--corpus', help='Corpus file')
    train_parser.add_argument('--test-fold', type=int, help='Held-out fold (default 0)')
    train_parser.add_argument('--pretrained', help='Pre-trained GRU checkpoint to start from')

    # Evaluate Command
    evaluate_parser = subparsers.add_parser('evaluate', parents=[common], help='k-fold cross-validation')
    evaluate_parser.add_argument('--corpus', help='Corpus file')

    # Sweep Command
    sweep_parser = subparsers.add_parser('sweep', parents=[common], help='Accuracy against meta-data usage')
    sweep_parser.add_argument('--corpus', help='Corpus file')
    sweep_parser.add_argument('--fractions', help='Comma separated shares of D_meta (default 0,0.25,0.5,0.75,1)')

    # Analyze Command
    analyze_parser = subparsers.add_parser('analyze', parents=[common], help='Cluster report and n-gram analytics')
    analyze_parser.add_argument('--corpus', help='Corpus file')
    analyze_parser.add_argument('--test-fold', type=int, help='Held-out fold (default 0)')
    analyze_parser.add_argument('--gram', type=int, choices=[3, 4], help='Gram length (default 4)')
    analyze_parser.add_argument('--top', type=int, help='Grams listed per subset (default 10)')

    # Profile Command
    profile_parser = subparsers.add_parser('profile', help='Manage saved profiles')
    profile_parser.add_argument('--list', action='store_true', help='List all saved profiles')
    profile_parser.add_argument('--show', metavar='NAME', help='Show a profile')
    profile_parser.add_argument('--delete', metavar='NAME', help='Delete a profile')

    # Diagnostic Command
    diagnostic_parser = subparsers.add_parser('diagnostic', help='Run system diagnostics')
    diagnostic_parser.add_argument('--output-root', help='Run-directory root to check')

    return parser


def fill_command_defaults(args) -> None:
    """Apply command defaults and coerce values read from config files."""
    for key, value in COMMAND_DEFAULTS.get(args.command, {}).items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)
    for key, kind in ARG_TYPES.items():
        value = getattr(args, key, None)
        if isinstance(value, str) and kind is not str:
            try:
                setattr(args, key, kind(value))
            except ValueError:
                raise UsageError(f"Invalid value for {key}: {value!r}")
    if args.command in CORPUS_COMMANDS and not args.corpus:
        raise UsageError(f"{args.command} needs --corpus")
    if args.command == "parse" and not args.input:
        raise UsageError("parse needs --input")


def parse_fractions(text: str):
    try:
        return tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise UsageError(f"Invalid fractions: {text!r}")


def command_arguments(args) -> Dict[str, Any]:
    return {
        key: getattr(args, key) for key in ARG_TYPES
        if getattr(args, key, None) is not None
    }


def start_run(args, config: Dict[str, Any]) -> str:
    """Create the run directory, attach run.log and store the resolved config."""
    run_dir = make_run_dir(get_output_root(args.output_root), fingerprint(config))
    setup_logging(args.log_level, os.path.join(run_dir, "run.log"))
    write_flat_config(os.path.join(run_dir, "config.cfg"), config, header=f"clickcfa {args.command}")
    logger.info(f"Run directory: {run_dir}")
    return run_dir


def load_corpus(args, recipe: TrainRecipe):
    corpus, _ = parse_log(args.corpus, skip_tolerance=recipe.skip_tolerance)
    logger.info(f"Loaded {len(corpus)} sessions from {args.corpus} (dataset {corpus.dataset_name})")
    return split_folds(corpus, recipe.folds, seed=recipe.seed, stratify=recipe.stratify)


def check_fold(recipe: TrainRecipe, test_fold: int) -> None:
    if not 0 <= test_fold < recipe.folds:
        raise UsageError(f"test fold {test_fold} outside 0..{recipe.folds - 1}")


def run_generate(args, recipe: TrainRecipe, run_dir: str) -> int:
    archetypes = load_archetypes(args.archetypes) if args.archetypes else default_archetypes()
    corpus = generate_synthetic(archetypes, args.n, seed=recipe.seed, dataset_name=args.dataset, n_videos=args.n_videos)
    path = serialize_corpus(corpus, os.path.join(run_dir, "corpus.tsv"))
    if args.out:
        serialize_corpus(corpus, args.out)
        path = args.out
    print(format_table(list(corpus_summary(corpus).items()), ["statistic", "value"]))
    print(f"\nCorpus written to {path}")
    return 0


def run_parse(args, recipe: TrainRecipe, run_dir: str) -> int:
    corpus, summary = parse_log(args.input, skip_tolerance=recipe.skip_tolerance, dataset_name=args.dataset)
    serialize_corpus(corpus, os.path.join(run_dir, "corpus.tsv"))
    if args.out:
        serialize_corpus(corpus, args.out)
    rows = summary.as_rows() + list(corpus_summary(corpus).items())
    write_csv(os.path.join(run_dir, "summary.csv"), ("statistic", "value"), rows)
    print(format_table(rows, ["statistic", "value"]))
    return 0


def run_pretrain(args, recipe: TrainRecipe, run_dir: str) -> int:
    corpus = load_corpus(args, recipe)
    sessions = list(corpus.sessions)
    if args.test_fold is not None:
        check_fold(recipe, args.test_fold)
        sessions = corpus.outside_fold(args.test_fold)
    samples, skipped = expand_corpus(sessions, gap_marker=recipe.gap_marker)
    logger.info(f"{len(samples)} leave-one-out samples, {skipped} single-click sessions skipped")
    result = pretrain(samples, recipe)
    checkpoint = result.gru_params.save(os.path.join(run_dir, "pretrained_gru.json"))
    write_csv(os.path.join(run_dir, "pretrain_history.csv"), ("epoch", "l_pre"), result.history)
    print(f"Pre-training stopped ({result.stop_reason}) after {len(result.history)} epochs")
    print(f"GRU checkpoint written to {checkpoint}")
    return 0


def run_train(args, recipe: TrainRecipe, run_dir: str) -> int:
    corpus = load_corpus(args, recipe)
    check_fold(recipe, args.test_fold)
    pretrained = ParamStore.load(args.pretrained) if args.pretrained else None
    if pretrained is not None and recipe.model != "gru":
        raise UsageError(f"a pre-trained GRU cannot initialise a {recipe.model} model")
    outcome = run_method(
        corpus.outside_fold(args.test_fold), corpus.fold(args.test_fold), recipe,
        out_dir=run_dir, tag=recipe.name, pretrained=pretrained,
    )
    report = EvalReport(
        method=recipe.name, fingerprint=recipe.fingerprint,
        fold_scores=[outcome.score], dropped=[len(corpus.fold(args.test_fold)) - len(outcome.test)],
        fold_hash=fold_hash(corpus.fold_assignments, corpus.session_ids()),
    )
    rows = report.fold_rows()
    for row in rows:
        row[1] = args.test_fold
    write_csv(os.path.join(run_dir, "fold.csv"), FOLD_HEADER, rows)
    print(format_table(rows, FOLD_HEADER))
    return 0


def run_evaluate(args, recipes, run_dir: str, grid: bool) -> int:
    corpus = load_corpus(args, recipes[0])
    reports = []
    for recipe in recipes:
        seed_everything(recipe.seed)
        reports.append(cross_validate(corpus, recipe, run_dir))
    if len({r.fold_hash for r in reports}) > 1:
        logger.error("Methods were evaluated on different fold assignments")
    fold_rows = [row for report in reports for row in report.fold_rows()]
    write_csv(os.path.join(run_dir, "folds.csv"), FOLD_HEADER, fold_rows)
    table = comparison_table(reports) if grid else [r.table_row() for r in reports]
    write_csv(os.path.join(run_dir, "table.csv"), TABLE_HEADER, table)
    print(format_table(table, TABLE_HEADER))
    print(f"\nResults written to {run_dir}")
    return 0


def run_sweep(args, recipe: TrainRecipe, run_dir: str) -> int:
    corpus = load_corpus(args, recipe)
    curve = meta_usage_sweep(corpus, recipe, parse_fractions(args.fractions), run_dir)
    header = ("fraction", "acc_mean", "acc_std", "meta_sessions_min", "meta_sessions_max")
    write_csv(os.path.join(run_dir, "sweep.csv"), header, curve)
    print(format_table(curve, header))
    return 0


def run_analyze(args, recipe: TrainRecipe, run_dir: str) -> int:
    corpus = load_corpus(args, recipe)
    check_fold(recipe, args.test_fold)
    train_sessions = corpus.outside_fold(args.test_fold)
    test_sessions = corpus.fold(args.test_fold)
    _, meta_sessions = carve_meta(train_sessions, recipe.meta_fraction, seed=recipe.seed)
    meta_labels = [compute_cfa(s).cfa for s in meta_sessions]

    silhouette_rows, cluster_rows = [], []
    for criterion in ("C1", "C2"):
        clusters = build_meta_clusters(
            meta_sessions, meta_labels, criterion, seed=recipe.seed,
            k_range=range(recipe.k_min, recipe.k_max + 1), n_clusters=recipe.n_clusters,
        )
        silhouette_rows.extend([criterion, k, s] for k, s in clusters.silhouette_curve)
        cluster_rows.extend([criterion] + row for row in clusters.report_rows(meta_labels))
    write_csv(os.path.join(run_dir, "silhouette.csv"), ("criterion", "k", "silhouette"), silhouette_rows)
    cluster_header = ("criterion", "order", "size", "entropy", "cfa_rate", "centroid")
    write_csv(os.path.join(run_dir, "clusters.csv"), cluster_header, cluster_rows)
    print(format_table(cluster_rows, cluster_header))

    outcome = run_method(train_sessions, test_sessions, recipe, out_dir=run_dir, tag=recipe.name)
    report = gram_analytics(outcome.model, test_sessions, n=args.gram, positive_class=recipe.positive_class)
    write_csv(os.path.join(run_dir, "grams.csv"), ("subset", "gram", "frequency"), report.rows(args.top))
    summary_header = ("subset", "size", "top2_share", "note")
    write_csv(os.path.join(run_dir, "grams_summary.csv"), summary_header, report.summary_rows())
    print()
    print(format_table(report.summary_rows(), summary_header))
    return 0


def run_profile(args, config_manager: ConfigManager) -> int:
    if args.list:
        profiles = config_manager.list_profiles()
        print("\nProfiles:")
        if profiles:
            for profile in profiles:
                print(f"  - {profile}")
        else:
            print("  No profiles found.")
    elif args.show:
        config = config_manager.load_profile(args.show)
        if not config:
            print(f"Profile '{args.show}' not found.")
            return 1
        print(f"\nProfile: {args.show}")
        print("=" * 50)
        for key, value in config.items():
            print(f"{key}: {value}")
    elif args.delete:
        if not config_manager.delete_profile(args.delete):
            print(f"Failed to delete profile '{args.delete}'.")
            return 1
        print(f"Profile '{args.delete}' deleted successfully.")
    else:
        raise UsageError("profile needs --list, --show or --delete")
    return 0


def run_pipeline(args, config_manager: ConfigManager) -> int:
    overrides, stored_name = config_manager.collect_overrides(args)
    fill_command_defaults(args)
    name = args.recipe or stored_name or COMMAND_RECIPES.get(args.command, "gru")

    if args.save_profile:
        profile = dict(overrides)
        if args.recipe:
            profile["name"] = args.recipe
        if config_manager.save_profile(args.save_profile, profile):
            print(f"Profile '{args.save_profile}' saved.")

    grid = name == "all"
    if grid and args.command != "evaluate":
        raise UsageError("--recipe all is only available for evaluate")
    if grid:
        recipes = recipe_grid(overrides)
        config = {"command": args.command, "recipe": "all", **overrides, **command_arguments(args)}
    else:
        recipes = [config_manager.resolve(args, recipe_name=name)]
        config = {"command": args.command, "recipe": name, **recipes[0].to_mapping(), **command_arguments(args)}

    run_dir = start_run(args, config)
    recipe = recipes[0]
    seed_everything(recipe.seed)

    if args.command == "generate":
        return run_generate(args, recipe, run_dir)
    if args.command == "parse":
        return run_parse(args, recipe, run_dir)
    if args.command == "pretrain":
        return run_pretrain(args, recipe, run_dir)
    if args.command == "train":
        return run_train(args, recipe, run_dir)
    if args.command == "evaluate":
        return run_evaluate(args, recipes, run_dir, grid)
    if args.command == "sweep":
        return run_sweep(args, recipe, run_dir)
    return run_analyze(args, recipe, run_dir)


def main(argv: Optional[list] = None) -> int:
    try:
        parser = create_parser()
        args = parser.parse_args(argv)

        if args.version:
            print(show_version())
            return 0

        if args.full_version:
            print(show_full_version())
            return 0

        if not args.command:
            parser.print_help()
            return 1

        setup_logging(getattr(args, 'log_level', "INFO"))
        if args.command == 'diagnostic':
            return diagnostic_main(args.output_root)

        config_manager = ConfigManager()
        if args.command == 'profile':
            return run_profile(args, config_manager)
        if getattr(args, 'list_profiles', False):
            return run_profile(argparse.Namespace(list=True, show=None, delete=None), config_manager)
        return run_pipeline(args, config_manager)
    except KeyboardInterrupt:
        print("\nOperation cancelled by user")
        return 1
    except ClickCFAError as e:
        logger.error(str(e))
        print(f"Error: {str(e)}")
        return e.exit_code
    except Exception as e:
        logger.exception("Unexpected error")
        print(f"Error: {str(e)}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
