"""Leave-one-out ranking evaluation and the popularity baseline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import InteractionDataset
from .propagation import FinalEmbeddings
from .scoring import mlp_logits

TASKS = ("group", "user")
DEFAULT_KS = (5, 10)


class CandidateError(ValueError):
    pass


@dataclass(eq=False)
class Candidates:
    """Test cases of one task: entity ids and candidate items, positive in column 0."""

    entities: np.ndarray
    items: np.ndarray  # (n_cases, 1 + n_neg)


def build_candidates(ds: InteractionDataset, task: str, eval_neg_count: int = 100,
                     rng: np.random.Generator | None = None) -> Candidates:
    """Held-out positive followed by its negatives.

    Negatives come from the dataset's negatives file when it has an entry for
    the entity (order preserved), else are drawn uniformly without replacement
    from items that are neither train nor test positives of that entity.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    tests = ds.test_cases(task)
    given = ds.eval_negatives(task)
    positives = ds.train_positives(task)
    rows, ents = [], []
    for e, item in tests:
        if e in given:
            negs = list(given[e])
        else:
            excluded = np.fromiter(positives[e] | {item}, dtype=np.int64)
            pool = np.setdiff1d(np.arange(ds.num_items), excluded)
            if len(pool) < eval_neg_count:
                raise CandidateError(
                    f"{task} {e}: only {len(pool)} non-positive items for {eval_neg_count} negatives")
            negs = rng.choice(pool, size=eval_neg_count, replace=False).tolist()
        rows.append([item] + negs)
        ents.append(e)
    width = {len(r) for r in rows}
    if len(width) > 1:
        raise CandidateError(f"{task} candidate lists have unequal lengths {sorted(width)}")
    items = np.asarray(rows, dtype=np.int64).reshape(len(rows), -1 if rows else 0)
    return Candidates(np.asarray(ents, dtype=np.int64), items)


def ranks(scores: np.ndarray, positive_index=0, pessimistic=False) -> np.ndarray:
    """1-based rank of the positive in each row of ``scores``.

    Ties go to the candidate listed first; with ``pessimistic`` the positive
    loses every tie.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    n, m = scores.shape
    pidx = np.broadcast_to(np.asarray(positive_index), (n,))
    pos = scores[np.arange(n), pidx][:, None]
    higher = (scores > pos).sum(axis=1)
    tie = scores == pos
    tie[np.arange(n), pidx] = False
    if pessimistic:
        ahead = tie.sum(axis=1)
    else:
        ahead = (tie & (np.arange(m)[None, :] < pidx[:, None])).sum(axis=1)
    return 1 + higher + ahead


def rank_metrics(scores, positive_index=0, ks=DEFAULT_KS, pessimistic=False) -> dict[str, float]:
    """Mean HR@K and NDCG@K over test cases with a single relevant item."""
    r = ranks(scores, positive_index, pessimistic)
    out = {}
    for k in ks:
        hit = r <= k
        out[f"HR@{k}"] = float(hit.mean()) if len(r) else 0.0
        out[f"NDCG@{k}"] = float(np.where(hit, 1.0 / np.log2(r + 1), 0.0).mean()) if len(r) else 0.0
    return out


@dataclass
class EvalReport:
    metrics: dict[str, dict[str, float]] = field(default_factory=dict)
    consensus_gap: float | None = None
    timings: dict[str, float] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_kv(self, with_timings=False) -> str:
        """One ``key=value`` per line, deterministic order."""
        lines = []
        for task in sorted(self.metrics):
            for name in sorted(self.metrics[task]):
                lines.append(f"{task}.{name}={self.metrics[task][name]:.10f}")
        if self.consensus_gap is not None:
            lines.append(f"consensus_gap={self.consensus_gap:.10f}")
        for k in sorted(self.config):
            lines.append(f"config.{k}={self.config[k]}")
        if with_timings:
            for k in sorted(self.timings):
                lines.append(f"time.{k}={self.timings[k]:.3f}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_kv(cls, text: str) -> "EvalReport":
        rep = cls()
        for line in text.splitlines():
            key, _, value = line.partition("=")
            if key == "consensus_gap":
                rep.consensus_gap = float(value)
            elif key.startswith("config."):
                rep.config[key[7:]] = value
            elif key.startswith("time."):
                rep.timings[key[5:]] = float(value)
            elif "." in key:
                task, name = key.split(".", 1)
                rep.metrics.setdefault(task, {})[name] = float(value)
        return rep

    def to_table(self) -> str:
        names = sorted({n for m in self.metrics.values() for n in m}, key=lambda s: (s.split("@")[0], int(s.split("@")[1])))
        lines = ["task    " + "".join(f"{n:>10}" for n in names)]
        for task in TASKS:
            if task in self.metrics:
                lines.append(f"{task:<8}" + "".join(f"{self.metrics[task].get(n, float('nan')):>10.4f}" for n in names))
        if self.consensus_gap is not None:
            lines.append(f"consensus gap: {self.consensus_gap:.4f}")
        for k, v in sorted(self.timings.items()):
            lines.append(f"{k} time: {v:.2f}s")
        return "\n".join(lines)


def score_candidates(emb: FinalEmbeddings, w1, w2, task: str, cands: Candidates) -> np.ndarray:
    table = emb.groups if task == "group" else emb.users
    n, m = cands.items.shape
    ent = np.repeat(table[cands.entities], m, axis=0)
    items = emb.items[cands.items.ravel()]
    # rank on the logit: sigmoid is monotone but rounds to exactly 1.0 for large inputs,
    # which would turn distinct scores into ties
    return mlp_logits(ent, items, w1, w2).reshape(n, m)


def evaluate(emb: FinalEmbeddings, params, ds: InteractionDataset, candidates: dict[str, Candidates],
             ks=DEFAULT_KS, pessimistic=False) -> EvalReport:
    """HR/NDCG of the shared MLP scorer for every task in ``candidates``. Read-only."""
    report = EvalReport()
    for task, cands in candidates.items():
        scores = score_candidates(emb, params["w1"], params["w2"], task, cands)
        report.metrics[task] = rank_metrics(scores, 0, ks, pessimistic)
    return report


def popularity_scores(ds: InteractionDataset, task: str) -> np.ndarray:
    """Training interaction count per item; the group task also counts group-item pairs."""
    counts = np.bincount(ds.user_item_train[:, 1], minlength=ds.num_items).astype(np.float64)
    if task == "group":
        counts += np.bincount(ds.group_item_train[:, 1], minlength=ds.num_items)
    return counts


def popularity_baseline(ds: InteractionDataset):
    """Scorer ``(task, candidates) -> scores`` ranking items by popularity."""
    tables = {task: popularity_scores(ds, task) for task in TASKS}

    def scorer(task, cands: Candidates):
        return tables[task][cands.items]

    return scorer


def evaluate_scorer(scorer, candidates: dict[str, Candidates], ks=DEFAULT_KS, pessimistic=False) -> EvalReport:
    report = EvalReport()
    for task, cands in candidates.items():
        report.metrics[task] = rank_metrics(scorer(task, cands), 0, ks, pessimistic)
    return report
