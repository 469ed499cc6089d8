"""Training loop and single-run experiment driver."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .alignment import consensus_gap
from .data import InteractionDataset, _pairs_array
from .evaluation import DEFAULT_KS, TASKS, Candidates, EvalReport, build_candidates, evaluate, rank_metrics, score_candidates
from .model import AlignGroupModel
from .params import Adam, ParameterSet, TrainConfig, init_parameters
from .scoring import TrainingPairBatch, sample_training_pairs

log = logging.getLogger(__name__)

# fixed stream ids so each random consumer gets an independent, reproducible stream
_STREAM_VALIDATION = 1
_STREAM_EVAL = 2
_STREAM_EPOCH = 3


def split_validation(ds: InteractionDataset, fraction: float, seed: int):
    """Hold out one training item for a ``fraction`` of groups with >= 2 training items.

    Returns the reduced dataset and the held-out ``(group, item)`` cases.
    """
    if fraction <= 0:
        return ds, []
    rng = np.random.default_rng([seed, _STREAM_VALIDATION])
    pairs = ds.group_item_train
    groups, counts = np.unique(pairs[:, 0], return_counts=True)
    eligible = groups[counts >= 2]
    n_val = int(round(fraction * len(eligible)))
    if n_val == 0:
        return ds, []
    chosen = np.sort(rng.choice(eligible, size=n_val, replace=False))
    held = []
    keep = np.ones(len(pairs), dtype=bool)
    for g in chosen:
        rows = np.flatnonzero(pairs[:, 0] == g)
        r = rows[rng.integers(len(rows))]
        keep[r] = False
        held.append((int(g), int(pairs[r, 1])))
    reduced = dataclasses.replace(ds, group_item_train=_pairs_array(pairs[keep]))
    return reduced, held


def validation_candidates(ds: InteractionDataset, held, eval_neg_count, seed) -> Candidates:
    rng = np.random.default_rng([seed, _STREAM_VALIDATION, 1])
    positives = ds.train_positives("group")
    for g, i in ds.group_item_test:
        positives[g].add(i)
    rows = []
    for g, item in held:
        pool = np.setdiff1d(np.arange(ds.num_items), np.fromiter(positives[g], dtype=np.int64))
        negs = rng.choice(pool, size=min(eval_neg_count, len(pool)), replace=False)
        rows.append(np.concatenate([[item], negs]))
    return Candidates(np.array([g for g, _ in held], dtype=np.int64), np.asarray(rows, dtype=np.int64))


def test_candidates(ds: InteractionDataset, config: TrainConfig, tasks=TASKS) -> dict[str, Candidates]:
    rng = np.random.default_rng([config.seed, _STREAM_EVAL])
    return {task: build_candidates(ds, task, config.eval_neg_count, rng) for task in tasks}


@dataclass
class EpochRecord:
    epoch: int
    user_loss: float
    group_loss: float
    align_loss: float
    total: float
    val_hr10: float | None

    def line(self) -> str:
        val = "nan" if self.val_hr10 is None else repr(self.val_hr10)
        return f"{self.epoch}\t{self.user_loss!r}\t{self.group_loss!r}\t{self.align_loss!r}\t{self.total!r}\t{val}"


TRACE_HEADER = "epoch\tuser_loss\tgroup_loss\talign_loss\ttotal\tval_hr10"


@dataclass
class TrainResult:
    params: ParameterSet
    model: AlignGroupModel
    trace: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    seconds: float = 0.0
    stopped_early: bool = False

    def trace_text(self) -> str:
        return "\n".join([TRACE_HEADER] + [r.line() for r in self.trace]) + "\n"


def _minibatches(batch: TrainingPairBatch, size: int, rng: np.random.Generator):
    """Shuffle user and group triples together and cut into chunks of ``size``."""
    nu, ng = len(batch.user), len(batch.group)
    order = rng.permutation(nu + ng)
    for start in range(0, len(order), size):
        chunk = order[start:start + size]
        yield TrainingPairBatch(batch.user.subset(chunk[chunk < nu]), batch.group.subset(chunk[chunk >= nu] - nu))


def train(ds: InteractionDataset, config: TrainConfig, params: ParameterSet | None = None) -> TrainResult:
    """Optimize the joint objective; one full propagation per Adam step.

    With ``val_fraction > 0`` a validation split is carved from the group
    training items, validation group HR@10 is tracked per epoch, training stops
    after ``patience`` epochs without improvement and the best parameters are
    returned.
    """
    t0 = time.perf_counter()
    train_ds, held = split_validation(ds, config.val_fraction, config.seed)
    model = AlignGroupModel(train_ds, config)
    params = params if params is not None else init_parameters(config, ds.num_users, ds.num_items, ds.num_groups)
    val_cands = validation_candidates(ds, held, config.eval_neg_count, config.seed) if held else None
    opt = Adam(lr=config.lr)
    result = TrainResult(params=params, model=model)
    best_val, best_params, since_best = -1.0, params.copy(), 0

    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng([config.seed, _STREAM_EPOCH, epoch])
        batch = sample_training_pairs(train_ds, config.train_neg_per_pos, rng)
        lu = lg = la = 0.0
        steps = 0
        for mb in _minibatches(batch, config.batch_size, rng):
            graph = model.forward(params, mb)
            graph.backward()
            opt.step(params)
            lu += graph.losses["user"]
            lg += graph.losses["group"]
            la += graph.losses["align"]
            steps += 1
        la = la / steps if steps else 0.0
        val = None
        if val_cands is not None:
            emb = model.embed(params)
            val = rank_metrics(score_candidates(emb, params["w1"], params["w2"], "group", val_cands), 0, (10,))["HR@10"]
        rec = EpochRecord(epoch, lu, lg, la, lu + lg + config.lambda_align * la, val)
        result.trace.append(rec)
        log.info("epoch %d  L_u=%.5f  L_g=%.5f  L_align=%.5f  val_H@10=%s", epoch, lu, lg, la,
                 "-" if val is None else f"{val:.4f}")
        if val is not None:
            if val > best_val:
                best_val, best_params, since_best = val, params.copy(), 0
                result.best_epoch = epoch
            else:
                since_best += 1
                if since_best >= config.patience:
                    result.stopped_early = True
                    log.info("early stop at epoch %d (best %d)", epoch, result.best_epoch)
                    break
        else:
            result.best_epoch = epoch

    if val_cands is not None and config.epochs > 0:
        result.params = best_params
    result.seconds = time.perf_counter() - t0
    return result


def evaluate_model(result: TrainResult, ds: InteractionDataset, config: TrainConfig, ks=DEFAULT_KS,
                   tasks=TASKS) -> EvalReport:
    t0 = time.perf_counter()
    cands = test_candidates(ds, config, tasks)
    emb = result.model.embed(result.params)
    report = evaluate(emb, result.params, ds, cands, ks, config.pessimistic_ties)
    _, report.consensus_gap = consensus_gap(emb.groups, emb.users, result.model.hypergraph)
    report.timings = {"train": result.seconds, "eval": time.perf_counter() - t0}
    report.config = config.to_dict()
    return report


def run_experiment(ds: InteractionDataset, config: TrainConfig, ks=DEFAULT_KS, tasks=TASKS):
    """Train then evaluate on the test split; returns ``(TrainResult, EvalReport)``."""
    result = train(ds, config)
    return result, evaluate_model(result, ds, config, ks, tasks)
