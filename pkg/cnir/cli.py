"""Command-line entry point: index, gen-synth, pretrain, train, reformulate, rank, eval."""
import argparse
import json
import logging
import sys
from pathlib import Path

from pydantic import ValidationError
from rich.markup import escape
from rich.panel import Panel
from rich.table import Table

from cnir import FORMAT_VERSION, __version__
from cnir.config import Settings, load_settings, parse_overrides
from cnir.core.exceptions import CnirError, UsageError
from cnir.models.knrm import KnrmParameters
from cnir.models.policy import PolicyParameters
from cnir.schemas.report import METRIC_NAMES, MetricReport
from cnir.services import dataset, synth, trainer
from cnir.services.corpus_io import load_corpus, load_qrels, read_run, write_run
from cnir.services.dataset import Collection, load_collection, prepare_split
from cnir.services.metrics import evaluate
from cnir.services.pipeline import (
    build_ranker,
    build_reformulator,
    pipeline_rankings,
    reformulate_queries,
)
from cnir.services.retrieval import build_index, save_index
from cnir.utils.logging import console, err_console, setup_logging

logger = logging.getLogger(__name__)

EPILOG = (
    "Examples:\n"
    "  python -m cnir gen-synth --out data/synth\n"
    "  python -m cnir pretrain --data data/synth --config data/synth/synth.conf\n"
    "  python -m cnir train --data data/synth --config data/synth/synth.conf --set seed=7\n"
    "  python -m cnir rank --data data/synth --method rl --output runs/rl.txt\n"
    "  python -m cnir eval --run runs/bm25.txt --run runs/rl.txt --qrels data/synth/qrels.txt\n"
)


class CliParser(argparse.ArgumentParser):
    """Parse errors become UsageError (exit code 1) instead of argparse's exit 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common() -> argparse.ArgumentParser:
    common = CliParser(add_help=False)
    common.add_argument("--config", help="Flat key = value config file")
    common.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE", help="Override one config key (repeatable)"
    )
    common.add_argument("--data", help="Data directory (overrides data_dir)")
    return common


def build_parser() -> CliParser:
    parser = CliParser(
        prog="cnir",
        description="Knowledge-enhanced query reformulation with a neural reranker",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=EPILOG,
    )
    parser.add_argument("--version", action="version", version=f"cnir {__version__} (format {FORMAT_VERSION})")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    common = _common()

    p = sub.add_parser("index", parents=[common], help="Build and save the BM25 inverted index")
    p.add_argument("-o", "--output", help="Index file (default: <data>/index.json)")

    p = sub.add_parser("gen-synth", parents=[common], help="Write a synthetic collection")
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--seed", type=int, help="Generator seed (default: config seed)")
    p.add_argument("--n-queries", type=int, default=160)
    p.add_argument("--n-docs", type=int, default=500)
    p.add_argument("--vocab-size", type=int, default=2000)
    p.add_argument("--synonym-pairs", type=int, default=120)

    p = sub.add_parser("pretrain", parents=[common], help="Pretrain KNRM on the original training queries")
    p.add_argument("--index", help="Reuse a saved index")

    p = sub.add_parser("train", parents=[common], help="Cooperative reformulator/ranker training")
    p.add_argument("--index", help="Reuse a saved index")

    p = sub.add_parser("reformulate", parents=[common], help="Write expanded queries as TSV")
    p.add_argument("--method", choices=("tfidf", "rm", "rl"), required=True)
    p.add_argument("--split", choices=dataset.SPLITS, default="test")
    p.add_argument("--policy", help="Policy checkpoint (default: <run_dir>/policy_best.ckpt)")
    p.add_argument("--index", help="Reuse a saved index")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("rank", parents=[common], help="Reformulate then rerank the BM25 pool; writes a TREC run")
    p.add_argument("--method", choices=("none", "tfidf", "rm", "rl"), default="none")
    p.add_argument("--ranker", choices=("knrm", "bm25"), help="Shorthand for --set ranker=...")
    p.add_argument("--split", choices=dataset.SPLITS, default="test")
    p.add_argument("--knrm", help="KNRM checkpoint (default: best, then pretrained, in <run_dir>)")
    p.add_argument("--policy", help="Policy checkpoint (default: <run_dir>/policy_best.ckpt)")
    p.add_argument("--index", help="Reuse a saved index")
    p.add_argument("-o", "--output", required=True, help="Run file")

    p = sub.add_parser("eval", parents=[common], help="MAP / ERR / nDCG of one or more run files")
    p.add_argument("--run", action="append", required=True, help="TREC run file (repeatable)")
    p.add_argument("--qrels", required=True)
    p.add_argument("--per-query", help="Write per-query metrics as TSV")
    p.add_argument("-o", "--output", help="Write mean metrics as JSON")
    return parser


def _settings(args: argparse.Namespace) -> Settings:
    overrides = parse_overrides(args.set)
    if getattr(args, "ranker", None):
        overrides["ranker"] = args.ranker
    if args.data:
        overrides["data_dir"] = args.data
    settings = load_settings(args.config, overrides)
    setup_logging(settings.LOG_LEVEL)
    return settings


def _collection(args: argparse.Namespace, settings: Settings) -> Collection:
    return load_collection(settings.DATA_DIR, settings, getattr(args, "index", None))


def _metric_table(title: str, reports: dict[str, MetricReport]) -> Table:
    table = Table(title=title)
    table.add_column("System", style="cyan")
    for name in METRIC_NAMES:
        table.add_column(name.upper(), justify="right")
    table.add_column("Queries", justify="right")
    for system, report in reports.items():
        table.add_row(system, *(f"{report.mean(n):.4f}" for n in METRIC_NAMES), str(report.evaluated))
    return table


def _knrm_checkpoint(args: argparse.Namespace, settings: Settings) -> KnrmParameters:
    if args.knrm:
        return KnrmParameters.load(args.knrm)
    for name in (trainer.BEST_KNRM, trainer.PRETRAINED_KNRM):
        path = settings.run_dir / name
        if path.is_file():
            logger.info("Using ranker checkpoint %s", path)
            return KnrmParameters.load(path)
    raise UsageError(f"no KNRM checkpoint in {settings.run_dir}; run pretrain or pass --knrm")


def _policy_checkpoint(args: argparse.Namespace, settings: Settings) -> PolicyParameters:
    path = Path(args.policy) if args.policy else settings.run_dir / trainer.BEST_POLICY
    if not path.is_file():
        raise UsageError(f"no policy checkpoint at {path}; run train or pass --policy")
    return PolicyParameters.load(path)


def cmd_index(args: argparse.Namespace) -> int:
    settings = _settings(args)
    documents = load_corpus(Path(settings.DATA_DIR) / dataset.CORPUS_FILE)
    index = build_index(documents)
    output = Path(args.output) if args.output else Path(settings.DATA_DIR) / dataset.INDEX_FILE
    save_index(index, output)
    console.print(
        Panel(
            f"[bold]Index[/bold] {output}\n"
            f"Documents: {index.doc_count}  Terms: {len(index.postings)}  "
            f"Avg length: {index.avg_doc_length:.2f}",
            border_style="cyan",
        )
    )
    return 0


def cmd_gen_synth(args: argparse.Namespace) -> int:
    settings = _settings(args)
    summary = synth.generate(
        args.out,
        seed=settings.SEED if args.seed is None else args.seed,
        n_queries=args.n_queries,
        n_docs=args.n_docs,
        vocab_size=args.vocab_size,
        synonym_pairs=args.synonym_pairs,
    )
    console.print(
        Panel(
            f"[bold]Synthetic collection[/bold] {summary.out_dir} (seed {summary.seed})\n"
            f"Documents: {summary.documents}  Queries: "
            + " / ".join(f"{k} {v}" for k, v in summary.queries.items())
            + f"\nPlanted: {summary.planted}  Controls: {summary.controls}  "
            f"Entities: {summary.entities}  Edges: {summary.edges}\n"
            f"BM25 MAP: {summary.raw_map:.4f}  Oracle expansion MAP: {summary.oracle_map:.4f}",
            border_style="cyan",
        )
    )
    return 0


def cmd_pretrain(args: argparse.Namespace) -> int:
    settings = _settings(args)
    if settings.RANKER != "knrm":
        raise UsageError("pretrain only applies to ranker = knrm")
    collection = _collection(args, settings)
    train = prepare_split(collection, "train", settings)
    valid = prepare_split(collection, "valid", settings)
    params = trainer.pretrain_ranker(collection, train, valid, settings)
    settings.run_dir.mkdir(parents=True, exist_ok=True)
    collection.vocab.save(settings.run_dir / trainer.VOCAB_FILE)
    path = settings.run_dir / trainer.PRETRAINED_KNRM
    params.save(path)
    settings.write_conf(settings.run_dir / trainer.CONFIG_SNAPSHOT)
    console.print(f"[green]Pretrained ranker saved to {path}[/green]")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    settings = _settings(args)
    collection = _collection(args, settings)
    console.print(
        Panel(
            f"[bold]Cooperative training[/bold] run {settings.run_dir}\n"
            f"Ranker: {settings.RANKER}  Candidates: {settings.CANDIDATE_SOURCE}  "
            f"K={settings.K} M={settings.M}  fine-tune every {settings.TRAIN_RANKER_FRE} epochs"
            + ("  (ranker frozen)" if settings.FREEZE_RANKER else ""),
            border_style="cyan",
        )
    )
    state = trainer.cooperative_loop(collection, settings)

    table = Table(title="Training history")
    for column in ("Epoch", "Reward", "Reward MA", "Valid MAP", "Valid nDCG@10", "Ranker"):
        table.add_column(column, justify="right")
    for r in state.history:
        style = "bold green" if r.epoch == state.best_epoch else None
        table.add_row(
            str(r.epoch), f"{r.mean_reward:.4f}", f"{r.reward_ma:.4f}",
            f"{r.valid_map:.4f}", f"{r.valid_ndcg10:.4f}", "updated" if r.ranker_updated else "-",
            style=style,
        )
    console.print(table)
    console.print(
        f"Best epoch {state.best_epoch} (valid nDCG@10 {state.best_metric:.4f})"
        + (", stopped early" if state.stopped_early else "")
    )
    return 0


def cmd_reformulate(args: argparse.Namespace) -> int:
    settings = _settings(args)
    collection = _collection(args, settings)
    contexts = prepare_split(collection, args.split, settings)
    reformulator = None
    if args.method == "rl":
        reformulator = build_reformulator(collection, settings, _policy_checkpoint(args, settings))
    expanded = reformulate_queries(contexts, args.method, collection, settings, reformulator)
    lines = [f"{qid}\t{' '.join(tokens)}" for qid, tokens in expanded.items()]
    Path(args.output).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    changed = sum(1 for ctx in contexts if expanded[ctx.query_id] != ctx.query.tokens)
    console.print(f"[green]{changed}/{len(contexts)} queries expanded; written to {args.output}[/green]")
    return 0


def cmd_rank(args: argparse.Namespace) -> int:
    settings = _settings(args)
    collection = _collection(args, settings)
    contexts = prepare_split(collection, args.split, settings)
    knrm = _knrm_checkpoint(args, settings) if settings.RANKER == "knrm" else None
    ranker = build_ranker(collection, settings, knrm)
    reformulator = None
    if args.method == "rl":
        reformulator = build_reformulator(collection, settings, _policy_checkpoint(args, settings))
    expanded = reformulate_queries(contexts, args.method, collection, settings, reformulator)
    runs = pipeline_rankings(contexts, expanded, ranker, collection.documents, settings.THREADS)
    write_run(runs.values(), args.output, tag=settings.RUN_TAG)
    report = evaluate(runs, collection.judgments, settings.REL_THRESHOLD)
    console.print(_metric_table(f"{args.split} split", {f"{args.method}+{settings.RANKER}": report}))
    console.print(f"[green]Run written to {args.output}[/green]")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    settings = _settings(args)
    judgments = load_qrels(args.qrels)
    reports = {}
    for path in args.run:
        reports[path] = evaluate(read_run(path), judgments, settings.REL_THRESHOLD)
    console.print(_metric_table("Evaluation", reports))

    if args.per_query:
        lines = ["\t".join(("run", "query_id", *METRIC_NAMES))]
        for path, report in reports.items():
            for query_id, values in report.per_query.items():
                lines.append("\t".join((path, query_id, *(f"{values[n]:.6f}" for n in METRIC_NAMES))))
        Path(args.per_query).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if args.output:
        payload = {path: {**r.means, "evaluated": r.evaluated, "skipped": r.skipped} for path, r in reports.items()}
        Path(args.output).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
        console.print(f"[green]Results saved to {args.output}[/green]")
    return 0


COMMANDS = {
    "index": cmd_index,
    "gen-synth": cmd_gen_synth,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "reformulate": cmd_reformulate,
    "rank": cmd_rank,
    "eval": cmd_eval,
}


def dispatch(argv: list[str] | None = None) -> int:
    """Run one subcommand; returns 0, 1 for usage/config errors, 2 for data errors."""
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 0
    except CnirError as e:
        err_console.print(f"[red]Error:[/red] {escape(e.detail)}", highlight=False)
        return e.exit_code
    except ValidationError as e:
        err_console.print(f"[red]Invalid data:[/red] {escape(str(e))}", highlight=False)
        return 2
    except OSError as e:
        err_console.print(f"[red]Error:[/red] {escape(str(e))}", highlight=False)
        return 2


def main() -> None:
    sys.exit(dispatch())
