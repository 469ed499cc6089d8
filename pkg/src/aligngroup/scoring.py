"""Shared MLP scorer, pairwise ranking losses and training-pair sampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import InteractionDataset

log = logging.getLogger(__name__)

LEAKY_SLOPE = 0.01


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


@dataclass(eq=False)
class MLPCache:
    x: np.ndarray
    h: np.ndarray
    a: np.ndarray
    y: np.ndarray


def mlp_logits(entity_rows, item_rows, w1, w2):
    """Pre-sigmoid scores. Same order as :func:`mlp_scores` without saturating at 1.0."""
    h = (entity_rows * item_rows) @ w1
    return (np.where(h > 0, h, LEAKY_SLOPE * h) @ w2).ravel()


def mlp_scores(entity_rows, item_rows, w1, w2, return_cache=False):
    """sigmoid(LeakyReLU((e * i) @ w1) @ w2) for every row pair."""
    x = entity_rows * item_rows
    h = x @ w1
    a = np.where(h > 0, h, LEAKY_SLOPE * h)
    y = _sigmoid(a @ w2).ravel()
    if return_cache:
        return y, MLPCache(x, h, a, y)
    return y


def mlp_backward(cache: MLPCache, entity_rows, item_rows, w1, w2, dy):
    """Gradients of sum(dy * y) w.r.t. entity rows, item rows, w1 and w2."""
    dz = (dy * cache.y * (1.0 - cache.y))[:, None]
    dw2 = cache.a.T @ dz
    da = dz @ w2.T
    dh = da * np.where(cache.h > 0, 1.0, LEAKY_SLOPE)
    dw1 = cache.x.T @ dh
    dx = dh @ w1.T
    return dx * item_rows, dx * entity_rows, dw1, dw2


def score(entity_row, item_row, w1, w2) -> float:
    """Predicted preference in (0, 1) of one entity (user or group) for one item."""
    return float(mlp_scores(np.atleast_2d(entity_row), np.atleast_2d(item_row), w1, w2)[0])


def entity_weights(entity: np.ndarray) -> np.ndarray:
    """1/|D_e| for every triple, |D_e| counted within ``entity``."""
    entity = np.asarray(entity)
    if len(entity) == 0:
        return np.zeros(0)
    _, inverse, counts = np.unique(entity, return_inverse=True, return_counts=True)
    return 1.0 / counts[inverse]


def bpr_loss(pos_scores, neg_scores, entity=None, mode="literal", weights=None, return_grad=False):
    """Pairwise ranking loss summed over entities, each entity's pairs averaged.

    literal:     -sum_e 1/|D_e| sum (y_p - y_n)
    log-sigmoid: -sum_e 1/|D_e| sum log sigmoid(y_p - y_n)

    Pass ``entity`` (ids per pair) or precomputed per-pair ``weights``.
    """
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if weights is None:
        weights = entity_weights(entity) if entity is not None else np.ones(len(pos))
    if len(pos) == 0:
        log.warning("empty pair batch; ranking loss is 0")
        return (0.0, pos.copy(), neg.copy()) if return_grad else 0.0
    diff = pos - neg
    if mode == "literal":
        loss = -float(np.sum(weights * diff))
        g = -weights
    elif mode == "log-sigmoid":
        loss = -float(np.sum(weights * _log_sigmoid(diff)))
        g = -weights * _sigmoid(-diff)
    else:
        raise ValueError(f"unknown bpr mode {mode!r}")
    if return_grad:
        return loss, g, -g
    return loss


def total_loss(user_bpr, group_bpr, align_loss, lambda_align) -> float:
    return user_bpr + group_bpr + lambda_align * align_loss


@dataclass(eq=False)
class TripleSet:
    entity: np.ndarray
    pos: np.ndarray
    neg: np.ndarray
    weight: np.ndarray  # 1/|D_entity| over the whole epoch sample

    def __len__(self):
        return len(self.entity)

    def subset(self, idx) -> "TripleSet":
        return TripleSet(self.entity[idx], self.pos[idx], self.neg[idx], self.weight[idx])

    @classmethod
    def empty(cls) -> "TripleSet":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, np.zeros(0))


@dataclass(eq=False)
class TrainingPairBatch:
    user: TripleSet
    group: TripleSet


def sample_triples(pairs: np.ndarray, num_entities: int, num_items: int, neg_per_pos: int,
                   rng: np.random.Generator) -> TripleSet:
    """Uniform negatives for every (entity, positive) pair, rejecting positives."""
    if len(pairs) == 0:
        return TripleSet.empty()
    positive = np.zeros((num_entities, num_items), dtype=bool)
    positive[pairs[:, 0], pairs[:, 1]] = True
    n_pos = positive.sum(axis=1)
    full = n_pos >= num_items
    if np.any(full):
        log.warning("skipping %d entities whose positives cover every item", int(full.sum()))
        pairs = pairs[~full[pairs[:, 0]]]
    entity = np.repeat(pairs[:, 0], neg_per_pos)
    pos = np.repeat(pairs[:, 1], neg_per_pos)
    neg = rng.integers(0, num_items, size=len(entity))
    bad = np.flatnonzero(positive[entity, neg])
    while len(bad):
        neg[bad] = rng.integers(0, num_items, size=len(bad))
        bad = bad[positive[entity[bad], neg[bad]]]
    weight = 1.0 / (n_pos[entity] * neg_per_pos)
    return TripleSet(entity, pos, neg, weight)


def sample_training_pairs(ds: InteractionDataset, neg_per_pos: int, rng: np.random.Generator,
                          group_pairs: np.ndarray | None = None) -> TrainingPairBatch:
    """Fresh user and group triples; ``group_pairs`` overrides the group positives."""
    gp = ds.group_item_train if group_pairs is None else group_pairs
    return TrainingPairBatch(
        user=sample_triples(ds.user_item_train, ds.num_users, ds.num_items, neg_per_pos, rng),
        group=sample_triples(gp, ds.num_groups, ds.num_items, neg_per_pos, rng),
    )
