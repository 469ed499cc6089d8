"""Hypergraph propagation: group consensus from members, members refreshed from groups.

Every layer is linear in the layer inputs, so the forward pass is a handful of
sparse products. The operators are precomputed once per hypergraph:

* ``user_mean`` / ``item_mean`` (G x U, G x I): row g averages the user (item)
  side of edge g; rows of empty sides are zero.
* ``user_refresh`` / ``item_refresh`` (U x G, I x G): size-weighted sum over the
  edges a vertex belongs to.
* ``user_keep`` / ``item_keep``: 1 for vertices in no edge, which carry their
  previous-layer row forward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .data import Hypergraph, group_overlap
from .params import NonFiniteError, ParameterSet


@dataclass(eq=False)
class Operators:
    user_mean: sp.csr_matrix
    item_mean: sp.csr_matrix
    user_refresh: sp.csr_matrix
    item_refresh: sp.csr_matrix
    user_keep: np.ndarray
    item_keep: np.ndarray
    overlap: np.ndarray

    @property
    def num_groups(self):
        return self.user_mean.shape[0]


def _mean_operator(sides: list[np.ndarray], n_cols: int) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for g, members in enumerate(sides):
        if len(members):
            rows.append(np.full(len(members), g))
            cols.append(members)
            vals.append(np.full(len(members), 1.0 / len(members)))
    if not rows:
        return sp.csr_matrix((len(sides), n_cols))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(len(sides), n_cols)
    )


def refresh_weight_matrix(vertex_edges: list[np.ndarray], edge_sizes: np.ndarray) -> sp.csr_matrix:
    """Per-vertex edge weights, one row per vertex.

    w(v, g) = (1/|E_v|) * sum_{g' in E_v} size(g') / (|E_v| * size(g)), with
    size(g) = |U_g| + |I_g|.
    """
    num_groups = len(edge_sizes)
    rows, cols, vals = [], [], []
    for v, edges in enumerate(vertex_edges):
        k = len(edges)
        if k == 0:
            continue
        sizes = edge_sizes[edges].astype(np.float64)
        w = (1.0 / k) * sizes.sum() / (k * sizes)
        rows.append(np.full(k, v))
        cols.append(edges)
        vals.append(w)
    if not rows:
        return sp.csr_matrix((len(vertex_edges), num_groups))
    # duplicate (v, g) entries are impossible: E_v lists each edge once
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(vertex_edges), num_groups),
    )


def build_operators(hg: Hypergraph, overlap: np.ndarray | None = None) -> Operators:
    sizes = hg.edge_sizes()
    return Operators(
        user_mean=_mean_operator(hg.users, hg.num_users),
        item_mean=_mean_operator(hg.items, hg.num_items),
        user_refresh=refresh_weight_matrix(hg.user_edges, sizes),
        item_refresh=refresh_weight_matrix(hg.item_edges, sizes),
        user_keep=np.array([len(e) == 0 for e in hg.user_edges], dtype=np.float64)[:, None],
        item_keep=np.array([len(e) == 0 for e in hg.item_edges], dtype=np.float64)[:, None],
        overlap=group_overlap(hg) if overlap is None else np.asarray(overlap, dtype=np.float64),
    )


def aggregate_group_sides(user_layer, item_layer, ops: Operators):
    """Mean of member-user rows and mean of member-item rows for every group."""
    return ops.user_mean @ user_layer, ops.item_mean @ item_layer


def fuse_group(user_msg, item_msg, w_fuse):
    """Concatenate the two side messages and project with ``w_fuse`` (2d x d)."""
    user_msg = np.atleast_2d(user_msg)
    item_msg = np.atleast_2d(item_msg)
    d = user_msg.shape[1]
    if item_msg.shape[1] != d or w_fuse.shape != (2 * d, d):
        raise ValueError(f"fusion shapes do not match: msgs d={d}, {item_msg.shape[1]}, W {w_fuse.shape}")
    return user_msg @ w_fuse[:d] + item_msg @ w_fuse[d:]


def refresh_members(group_layer, ops: Operators, prev_user=None, prev_item=None):
    """Rebuild user and item rows from the groups they belong to.

    Vertices outside every group keep ``prev_user`` / ``prev_item`` rows
    (zero when those are not given).
    """
    users = ops.user_refresh @ group_layer
    items = ops.item_refresh @ group_layer
    if prev_user is not None:
        users = users + ops.user_keep * prev_user
    if prev_item is not None:
        items = items + ops.item_keep * prev_item
    return users, items


@dataclass(eq=False)
class FinalEmbeddings:
    users: np.ndarray
    items: np.ndarray
    groups: np.ndarray


@dataclass(eq=False)
class PropagationCache:
    """Layer states kept for the reverse pass."""

    user_layers: list[np.ndarray]
    item_layers: list[np.ndarray]
    group_layers: list[np.ndarray]
    user_msgs: list[np.ndarray]
    item_msgs: list[np.ndarray]
    interrl: bool


def _check(name, layer, arr):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite {name} embeddings at layer {layer}")


def propagate(params: ParameterSet, ops: Operators, layers: int, interrl: bool = True,
              return_cache: bool = False):
    """Run the L-layer forward pass and average the layers.

    Group output with ``interrl`` is (sum_{l>=1} E_g^l + overlap @ E_g^0) / (L+1);
    without it, the plain mean over layers 0..L.
    """
    w = params["w_fuse"]
    eu, ei, eg = params["user_emb"], params["item_emb"], params["group_emb"]
    user_layers, item_layers, group_layers = [eu], [ei], [eg]
    user_msgs, item_msgs = [], []
    for layer in range(1, layers + 1):
        mu, mi = aggregate_group_sides(user_layers[-1], item_layers[-1], ops)
        ghat = fuse_group(mu, mi, w)
        nu, ni = refresh_members(ghat, ops, user_layers[-1], item_layers[-1])
        for name, arr in (("group", ghat), ("user", nu), ("item", ni)):
            _check(name, layer, arr)
        user_msgs.append(mu)
        item_msgs.append(mi)
        group_layers.append(ghat)
        user_layers.append(nu)
        item_layers.append(ni)

    scale = 1.0 / (layers + 1)
    users = sum(user_layers) * scale
    items = sum(item_layers) * scale
    if interrl:
        groups = (sum(group_layers[1:]) + ops.overlap @ eg) * scale
    else:
        groups = sum(group_layers) * scale
    out = FinalEmbeddings(users, items, groups)
    if return_cache:
        return out, PropagationCache(user_layers, item_layers, group_layers, user_msgs, item_msgs, interrl)
    return out


def propagate_backward(cache: PropagationCache, params: ParameterSet, ops: Operators,
                       d_users, d_items, d_groups) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. the propagation parameters.

    ``d_users`` etc. are gradients w.r.t. the averaged output tables.
    """
    layers = len(cache.group_layers) - 1
    scale = 1.0 / (layers + 1)
    w = params["w_fuse"]
    d = w.shape[1]
    w_top, w_bot = w[:d], w[d:]

    du = d_users * scale  # running gradient w.r.t. user layer l
    di = d_items * scale
    dg_layer = d_groups * scale
    d_w = np.zeros_like(w)
    for layer in range(layers, 0, -1):
        dghat = dg_layer + ops.user_refresh.T @ du + ops.item_refresh.T @ di
        mu, mi = cache.user_msgs[layer - 1], cache.item_msgs[layer - 1]
        d_w[:d] += mu.T @ dghat
        d_w[d:] += mi.T @ dghat
        dmu = dghat @ w_top.T
        dmi = dghat @ w_bot.T
        du = d_users * scale + ops.user_keep * du + ops.user_mean.T @ dmu
        di = d_items * scale + ops.item_keep * di + ops.item_mean.T @ dmi

    if cache.interrl:
        d_group_emb = ops.overlap.T @ (d_groups * scale)
    else:
        d_group_emb = d_groups * scale
    return {"user_emb": du, "item_emb": di, "group_emb": d_group_emb, "w_fuse": d_w}


def propagate_reference(params: ParameterSet, hg: Hypergraph, overlap, layers, interrl=True) -> FinalEmbeddings:
    """Direct per-group / per-vertex loop implementation of the forward pass.

    Slow; kept as an independent check on :func:`propagate`.
    """
    w = params["w_fuse"]
    d = w.shape[1]
    eu = [params["user_emb"].copy()]
    ei = [params["item_emb"].copy()]
    eg = [params["group_emb"].copy()]
    G = hg.num_groups
    sizes = [len(hg.users[g]) + len(hg.items[g]) for g in range(G)]
    for _ in range(layers):
        prev_u, prev_i = eu[-1], ei[-1]
        ghat = np.zeros((G, d))
        for g in range(G):
            mu = np.zeros(d)
            for u in hg.users[g]:
                mu += prev_u[u] / len(hg.users[g])
            mi = np.zeros(d)
            for i in hg.items[g]:
                mi += prev_i[i] / len(hg.items[g])
            cat = np.concatenate([mu, mi])
            for c in range(d):
                ghat[g, c] = sum(cat[r] * w[r, c] for r in range(2 * d))
        new_u = prev_u.copy()
        for u in range(hg.num_users):
            edges = hg.user_edges[u]
            if len(edges) == 0:
                continue
            k = len(edges)
            total = sum(sizes[e] for e in edges)
            new_u[u] = sum((1.0 / k) * total / (k * sizes[g]) * ghat[g] for g in edges)
        new_i = prev_i.copy()
        for i in range(hg.num_items):
            edges = hg.item_edges[i]
            if len(edges) == 0:
                continue
            k = len(edges)
            total = sum(sizes[e] for e in edges)
            new_i[i] = sum((1.0 / k) * total / (k * sizes[g]) * ghat[g] for g in edges)
        eu.append(new_u)
        ei.append(new_i)
        eg.append(ghat)
    n = layers + 1
    users = sum(eu) / n
    items = sum(ei) / n
    if interrl:
        mixed = np.zeros_like(eg[0])
        for p in range(G):
            for q in range(G):
                mixed[p] += overlap[p][q] * eg[0][q]
        groups = (sum(eg[1:]) + mixed) / n
    else:
        groups = sum(eg) / n
    return FinalEmbeddings(users, items, groups)
