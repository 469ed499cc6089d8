"""Members' common preferences and the contrastive alignment loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Hypergraph


def member_scope(hg: Hypergraph, g: int, scope: str) -> np.ndarray:
    """Member vertex ids of group ``g`` (users, plus offset items for 'big')."""
    if scope == "small":
        return hg.users[g].copy()
    if scope == "big":
        return hg.edge_vertices(g)
    raise ValueError(f"unknown scope {scope!r}")


@dataclass(eq=False)
class MemberIndex:
    """Concatenated member vertex lists of all groups (CSR style)."""

    vertices: np.ndarray
    offsets: np.ndarray  # start of each group's slice, len G
    counts: np.ndarray

    @classmethod
    def build(cls, hg: Hypergraph, scope: str) -> "MemberIndex":
        lists = [member_scope(hg, g, scope) for g in range(hg.num_groups)]
        counts = np.array([len(x) for x in lists], dtype=np.int64)
        if np.any(counts == 0):
            raise ValueError("every group needs at least one member")
        offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
        return cls(np.concatenate(lists).astype(np.int64), offsets, counts)

    @property
    def group_of(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.counts)), self.counts)


def common_preference(member_rows: np.ndarray, strategy: str) -> np.ndarray:
    """Common preference of one group's member rows (k x d)."""
    member_rows = np.atleast_2d(member_rows)
    if len(member_rows) == 0:
        raise ValueError("members must be non-empty")
    if strategy == "centroid":
        return 0.5 * (member_rows.max(axis=0) + member_rows.min(axis=0))
    if strategy == "barycenter":
        return member_rows.mean(axis=0)
    raise ValueError(f"unknown strategy {strategy!r}")


@dataclass(eq=False)
class CommonPreferenceTable:
    table: np.ndarray
    strategy: str
    scope: str
    # first argmax / argmin position inside ``members.vertices`` (centroid only)
    argmax: np.ndarray | None = None
    argmin: np.ndarray | None = None


def common_preferences(vertex_table: np.ndarray, members: MemberIndex, strategy: str, scope: str = "small"
                       ) -> CommonPreferenceTable:
    """Stack the common preference of every group.

    ``vertex_table`` is users stacked over items, matching vertex ids.
    """
    rows = vertex_table[members.vertices]
    off = members.offsets
    if strategy == "barycenter":
        table = np.add.reduceat(rows, off, axis=0) / members.counts[:, None]
        return CommonPreferenceTable(table, strategy, scope)
    if strategy != "centroid":
        raise ValueError(f"unknown strategy {strategy!r}")
    hi = np.maximum.reduceat(rows, off, axis=0)
    lo = np.minimum.reduceat(rows, off, axis=0)
    seg = members.group_of
    pos = np.arange(len(rows))[:, None] * np.ones((1, rows.shape[1]), dtype=np.int64)
    big = len(rows)
    argmax = np.minimum.reduceat(np.where(rows == hi[seg], pos, big), off, axis=0)
    argmin = np.minimum.reduceat(np.where(rows == lo[seg], pos, big), off, axis=0)
    return CommonPreferenceTable(0.5 * (hi + lo), strategy, scope, argmax, argmin)


def common_preferences_backward(cp: CommonPreferenceTable, members: MemberIndex, d_table: np.ndarray,
                                num_vertices: int) -> np.ndarray:
    """Gradient w.r.t. the stacked vertex table (ties route to the first extreme)."""
    d = d_table.shape[1]
    out = np.zeros((num_vertices, d))
    if cp.strategy == "barycenter":
        per_row = (d_table / members.counts[:, None])[members.group_of]
        np.add.at(out, members.vertices, per_row)
        return out
    cols = np.broadcast_to(np.arange(d), cp.argmax.shape)
    np.add.at(out, (members.vertices[cp.argmax], cols), 0.5 * d_table)
    np.add.at(out, (members.vertices[cp.argmin], cols), 0.5 * d_table)
    return out


def _logsumexp(x, axis=None):
    m = np.max(x, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis) if axis is not None else out.item()


def _softmax(x, axis=-1):
    z = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def alignment_loss(groups: np.ndarray, common: np.ndarray, tau: float, mode: str = "literal",
                   return_grad: bool = False):
    """Contrastive alignment between group consensus rows and common-preference rows.

    literal:    sum_p -log exp(c_p.g_p/tau) / sum_q exp(c_q.g_q/tau)
    cross-pair: sum_p -log exp(c_p.g_p/tau) / sum_q exp(c_q.g_p/tau)

    With ``return_grad`` also returns ``(d_groups, d_common)``.
    """
    if tau <= 0:
        raise ValueError("tau must be > 0")
    if groups.shape != common.shape:
        raise ValueError(f"shape mismatch {groups.shape} vs {common.shape}")
    if not (np.all(np.isfinite(groups)) and np.all(np.isfinite(common))):
        raise FloatingPointError("NaN or inf in alignment inputs")
    n = len(groups)
    if mode == "literal":
        s = np.einsum("ij,ij->i", common, groups) / tau
        loss = float(-s.sum() + n * _logsumexp(s))
        if not return_grad:
            return loss
        ds = n * _softmax(s) - 1.0
        return loss, ds[:, None] * common / tau, ds[:, None] * groups / tau
    if mode == "cross-pair":
        S = groups @ common.T / tau
        loss = float(np.sum(_logsumexp(S, axis=1) - np.diag(S)))
        if not return_grad:
            return loss
        dS = _softmax(S, axis=1)
        dS[np.diag_indices(n)] -= 1.0
        return loss, dS @ common / tau, dS.T @ groups / tau
    raise ValueError(f"unknown alignment mode {mode!r}")


def consensus_gap(groups: np.ndarray, users: np.ndarray, hg: Hypergraph) -> tuple[np.ndarray, float]:
    """Mean Euclidean distance from each group row to its member-user rows."""
    members = MemberIndex.build(hg, "small")
    dist = np.linalg.norm(users[members.vertices] - groups[members.group_of], axis=1)
    per_group = np.add.reduceat(dist, members.offsets) / members.counts
    return per_group, float(per_group.mean()) if len(per_group) else 0.0
