"""Ranker pretraining and the cooperative reformulator/ranker loop."""
import logging
from collections.abc import Sequence
from pathlib import Path

import numpy as np

from cnir.config import Settings, get_settings
from cnir.core.exceptions import DataFormatError, InvariantError, TrainingError
from cnir.core.rng import stream
from cnir.models.knrm import KnrmParameters
from cnir.schemas.corpus import Document
from cnir.schemas.report import EpochRecord, TrainingState
from cnir.services.dataset import Collection, QueryContext, prepare_split
from cnir.services.lexical import Vocabulary
from cnir.services.metrics import reward
from cnir.services.pipeline import (
    build_ranker,
    build_reformulator,
    evaluate_pipeline,
    initial_knrm,
    ordered_map,
)
from cnir.services.ranker_knrm import KnrmRanker, Ranker, build_pairs, rerank
from cnir.services.reformulator import QueryReformulator

logger = logging.getLogger(__name__)

HISTORY_FILE = "history.tsv"
CONFIG_SNAPSHOT = "config.conf"
STATE_FILE = "state.json"
PRETRAINED_KNRM = "knrm_pretrained.ckpt"
BEST_KNRM = "knrm_best.ckpt"
BEST_POLICY = "policy_best.ckpt"
VOCAB_FILE = "vocab.txt"
SELECTION_METRIC = "ndcg@10"


def _query_pairs(
    contexts: Sequence[QueryContext],
    collection: Collection,
) -> list[tuple[QueryContext, list[tuple[Document, Document]]]]:
    docs = collection.documents
    out = []
    for ctx in contexts:
        pairs = build_pairs(ctx.pool, collection.judgments, docs)
        if pairs:
            out.append((ctx, [(docs[p], docs[m]) for p, m in pairs]))
    return out


def pretrain_ranker(
    collection: Collection,
    train: Sequence[QueryContext],
    valid: Sequence[QueryContext],
    settings: Settings | None = None,
    params: KnrmParameters | None = None,
) -> KnrmParameters:
    """Pairwise hinge training on the original queries.

    Early-stopped on validation nDCG@10 of the un-reformulated rerank; the
    best epoch's parameters are returned. With pretrain_epochs = 0 the
    initial parameters come back untouched.
    """
    settings = settings or get_settings()
    params = params or initial_knrm(collection, settings)
    if settings.PRETRAIN_EPOCHS == 0:
        return params
    query_pairs = _query_pairs(train, collection)
    if not query_pairs:
        raise TrainingError("no training query has a pair of differently graded documents")

    ranker = KnrmRanker(params, settings.LR_PRETRAIN)
    best_metric = float("-inf")
    best_params = params.copy()
    since_best = 0
    for epoch in range(1, settings.PRETRAIN_EPOCHS + 1):
        order = stream(settings.SEED, "pretrain", epoch).permutation(len(query_pairs))
        losses = [ranker.train_query(query_pairs[i][0].query.tokens, query_pairs[i][1])[0] for i in order]
        if not valid:
            logger.info("Pretrain epoch %d: loss %.4f", epoch, float(np.mean(losses)))
            best_params = ranker.params.copy()
            continue
        _, report = evaluate_pipeline(valid, "none", collection, ranker, settings)
        metric = report.mean(SELECTION_METRIC)
        logger.info("Pretrain epoch %d: loss %.4f, valid nDCG@10 %.4f", epoch, float(np.mean(losses)), metric)
        if metric > best_metric:
            best_metric, best_params, since_best = metric, ranker.params.copy(), 0
        else:
            since_best += 1
            if since_best >= settings.PATIENCE:
                logger.info("Pretraining stopped early after epoch %d", epoch)
                break
    return best_params


def _episodes(
    ctx: QueryContext,
    reformulator: QueryReformulator,
    ranker: Ranker,
    collection: Collection,
    settings: Settings,
    epoch: int,
) -> tuple[dict[str, np.ndarray], list[float]]:
    """M sampled reformulations of one query, each rewarded by AP of the reranked pool."""
    rng = stream(settings.SEED, "episode", epoch, ctx.query_id)
    fwd = reformulator.forward(ctx.query, ctx.candidates)
    episodes = []
    for _ in range(settings.M):
        action = reformulator.sample(ctx.query, ctx.candidates, rng, fwd)
        ranked = rerank(action.reformulated_query, ctx.pool, ranker, collection.documents)
        episodes.append((action, reward(ranked, collection.judgments, settings.REL_THRESHOLD)))
    return reformulator.gradients(fwd, episodes), [r for _, r in episodes]


def reformulator_epoch(
    contexts: Sequence[QueryContext],
    reformulator: QueryReformulator,
    ranker: Ranker,
    collection: Collection,
    settings: Settings | None = None,
    epoch: int = 1,
) -> float:
    """One REINFORCE pass over the training queries with the ranker frozen.

    Queries without candidates are skipped. Per-query gradients of a batch
    are averaged into a single Adagrad step. Returns the mean reward.
    """
    settings = settings or get_settings()
    active = [ctx for ctx in contexts if len(ctx.candidates)]
    order = stream(settings.SEED, "reformulator", epoch).permutation(len(active))
    ordered = [active[i] for i in order]
    rewards: list[float] = []
    for start in range(0, len(ordered), settings.BATCH_SIZE):
        batch = ordered[start:start + settings.BATCH_SIZE]
        results = ordered_map(
            lambda ctx: _episodes(ctx, reformulator, ranker, collection, settings, epoch),
            batch,
            settings.THREADS,
        )
        reformulator.apply([grads for grads, _ in results])
        for _, episode_rewards in results:
            rewards.extend(episode_rewards)
    return float(np.mean(rewards)) if rewards else 0.0


def finetune_ranker_epoch(
    contexts: Sequence[QueryContext],
    reformulator: QueryReformulator,
    ranker: KnrmRanker,
    collection: Collection,
    settings: Settings | None = None,
    epoch: int = 1,
) -> bool:
    """One ranker pass on a single sampled reformulation per query, policy frozen.

    Returns whether any Adam step was taken.
    """
    settings = settings or get_settings()
    query_pairs = _query_pairs(contexts, collection)
    order = stream(settings.SEED, "finetune", epoch).permutation(len(query_pairs))
    updated = False
    for i in order:
        ctx, pairs = query_pairs[i]
        tokens = ctx.query.tokens
        if len(ctx.candidates):
            rng = stream(settings.SEED, "finetune-sample", epoch, ctx.query_id)
            tokens = reformulator.sample(ctx.query, ctx.candidates, rng).reformulated_query
        _, stepped = ranker.train_query(tokens, pairs)
        updated |= stepped
    return updated


def write_history(path: str | Path, records: Sequence[EpochRecord]) -> None:
    lines = ["\t".join(EpochRecord.columns())] + [r.tsv_row() for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_or_pretrain(
    collection: Collection,
    settings: Settings,
    run_dir: Path,
    train: Sequence[QueryContext] | None = None,
    valid: Sequence[QueryContext] | None = None,
) -> KnrmParameters:
    """Reuse knrm_pretrained.ckpt in the run directory, else pretrain and save it.

    The collection vocabulary is saved next to it; a reused checkpoint must
    come from a run over the same vocabulary.
    """
    path = run_dir / PRETRAINED_KNRM
    vocab_path = run_dir / VOCAB_FILE
    if path.is_file():
        if vocab_path.is_file() and Vocabulary.load(vocab_path).tokens != collection.vocab.tokens:
            raise DataFormatError("run directory was trained on a different vocabulary", vocab_path)
        logger.info("Using pretrained ranker %s", path)
        return KnrmParameters.load(path)
    train = train if train is not None else prepare_split(collection, "train", settings)
    valid = valid if valid is not None else prepare_split(collection, "valid", settings)
    params = pretrain_ranker(collection, train, valid, settings)
    run_dir.mkdir(parents=True, exist_ok=True)
    collection.vocab.save(vocab_path)
    params.save(path)
    logger.info("Saved pretrained ranker to %s", path)
    return params


def cooperative_loop(
    collection: Collection,
    settings: Settings | None = None,
    run_dir: str | Path | None = None,
) -> TrainingState:
    """Alternate REINFORCE epochs with periodic ranker fine-tuning.

    The ranker is fine-tuned after every train_ranker_fre-th epoch unless
    frozen or not trainable. Validation nDCG@10 of the greedy pipeline picks
    the best checkpoints; training stops after patience epochs without
    improvement or at max_epochs.
    """
    settings = settings or get_settings()
    run_dir = Path(run_dir or settings.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    settings.write_conf(run_dir / CONFIG_SNAPSHOT)

    train = prepare_split(collection, "train", settings)
    valid = prepare_split(collection, "valid", settings)
    if settings.RANKER == "knrm":
        knrm = load_or_pretrain(collection, settings, run_dir, train, valid)
        ranker = build_ranker(collection, settings, knrm.copy(), settings.LR_FINETUNE)
    else:
        ranker = build_ranker(collection, settings)
    reformulator = build_reformulator(collection, settings)

    state = TrainingState()
    policy_path = run_dir / BEST_POLICY
    knrm_path = run_dir / BEST_KNRM
    for epoch in range(1, settings.MAX_EPOCHS + 1):
        ranker_digest = ranker.digest()
        mean_reward = reformulator_epoch(train, reformulator, ranker, collection, settings, epoch)
        if ranker.digest() != ranker_digest:
            raise InvariantError(f"ranker parameters changed during reformulator epoch {epoch}")

        updated = False
        if epoch % settings.TRAIN_RANKER_FRE == 0 and not settings.FREEZE_RANKER and ranker.trainable:
            policy_digest = reformulator.digest()
            updated = finetune_ranker_epoch(train, reformulator, ranker, collection, settings, epoch)
            if reformulator.digest() != policy_digest:
                raise InvariantError(f"policy parameters changed during ranker epoch {epoch}")

        _, report = evaluate_pipeline(valid, "rl", collection, ranker, settings, reformulator)
        state.reward_trace.append(mean_reward)
        record = EpochRecord(
            epoch=epoch,
            mean_reward=mean_reward,
            reward_ma=float(np.mean(state.reward_trace[-settings.REWARD_WINDOW:])),
            valid_map=report.mean("map"),
            valid_err=report.mean("err"),
            valid_ndcg5=report.mean("ndcg@5"),
            valid_ndcg10=report.mean("ndcg@10"),
            ranker_updated=updated,
        )
        state.history.append(record)
        state.epoch = epoch
        write_history(run_dir / HISTORY_FILE, state.history)
        logger.info(
            "Epoch %d: reward %.4f (ma %.4f), valid MAP %.4f nDCG@10 %.4f%s",
            epoch, record.mean_reward, record.reward_ma, record.valid_map, record.valid_ndcg10,
            ", ranker fine-tuned" if updated else "",
        )

        metric = report.mean(SELECTION_METRIC)
        if metric > state.best_metric:
            state.best_metric, state.best_epoch = metric, epoch
            reformulator.params.save(policy_path)
            state.policy_checkpoint = str(policy_path)
            if isinstance(ranker, KnrmRanker):
                ranker.params.save(knrm_path)
                state.ranker_checkpoint = str(knrm_path)
        elif epoch - state.best_epoch >= settings.PATIENCE:
            state.stopped_early = True
            logger.info("No improvement for %d epochs; stopping after epoch %d", settings.PATIENCE, epoch)
            break

    if state.policy_checkpoint is None:
        reformulator.params.save(policy_path)
        state.policy_checkpoint = str(policy_path)
        if isinstance(ranker, KnrmRanker):
            ranker.params.save(knrm_path)
            state.ranker_checkpoint = str(knrm_path)
    (run_dir / STATE_FILE).write_text(state.model_dump_json(indent=2), encoding="utf-8")
    return state
