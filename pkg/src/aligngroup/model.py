"""The full objective as a recorded forward pass with a matching reverse pass."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .alignment import (CommonPreferenceTable, MemberIndex, alignment_loss, common_preferences,
                        common_preferences_backward)
from .data import Hypergraph, InteractionDataset, build_hypergraph
from .params import PARAM_NAMES, NonFiniteError, ParameterSet, TrainConfig
from .propagation import FinalEmbeddings, Operators, PropagationCache, build_operators, propagate, propagate_backward
from .scoring import TrainingPairBatch, bpr_loss, mlp_backward, mlp_scores


class AlignGroupModel:
    """Static structure (hypergraph, operators, member index) plus the loss."""

    def __init__(self, dataset: InteractionDataset, config: TrainConfig, hypergraph: Hypergraph | None = None):
        self.dataset = dataset
        self.config = config
        self.hypergraph = hypergraph if hypergraph is not None else build_hypergraph(dataset)
        self.ops: Operators = build_operators(self.hypergraph)
        self.members = MemberIndex.build(self.hypergraph, config.scope)

    @property
    def num_vertices(self):
        return self.hypergraph.num_vertices

    def embed(self, params: ParameterSet) -> FinalEmbeddings:
        return propagate(params, self.ops, self.config.layers, self.config.interrl_enabled)

    def common_preferences(self, emb: FinalEmbeddings) -> CommonPreferenceTable:
        vertex_table = np.vstack([emb.users, emb.items])
        return common_preferences(vertex_table, self.members, self.config.strategy, self.config.scope)

    def forward(self, params: ParameterSet, batch: TrainingPairBatch) -> "LossGraph":
        cfg = self.config
        emb, cache = propagate(params, self.ops, cfg.layers, cfg.interrl_enabled, return_cache=True)
        graph = LossGraph(model=self, params=params, emb=emb, prop_cache=cache)
        w1, w2 = params["w1"], params["w2"]

        for task, triples, table in (("user", batch.user, emb.users), ("group", batch.group, emb.groups)):
            ent = table[triples.entity]
            pos_items = emb.items[triples.pos]
            neg_items = emb.items[triples.neg]
            yp, cp = mlp_scores(ent, pos_items, w1, w2, return_cache=True)
            yn, cn = mlp_scores(ent, neg_items, w1, w2, return_cache=True)
            loss, dyp, dyn = bpr_loss(yp, yn, mode=cfg.bpr_mode, weights=triples.weight, return_grad=True)
            graph.rank_parts[task] = (triples, ent, pos_items, neg_items, cp, cn, dyp, dyn)
            graph.losses[task] = loss

        if cfg.lambda_align > 0:
            common = self.common_preferences(emb)
            la, dg, dc = alignment_loss(emb.groups, common.table, cfg.tau, cfg.infonce_mode, return_grad=True)
            graph.common = common
            graph.align_grads = (dg, dc)
        else:
            la = 0.0
        graph.losses["align"] = la
        graph.total = graph.losses["user"] + graph.losses["group"] + cfg.lambda_align * la
        if not np.isfinite(graph.total):
            raise NonFiniteError("non-finite training loss")
        return graph

    def loss_value(self, params: ParameterSet, batch: TrainingPairBatch) -> float:
        return self.forward(params, batch).total


@dataclass(eq=False)
class LossGraph:
    model: AlignGroupModel
    params: ParameterSet
    emb: FinalEmbeddings
    prop_cache: PropagationCache
    losses: dict = field(default_factory=dict)
    rank_parts: dict = field(default_factory=dict)
    common: CommonPreferenceTable | None = None
    align_grads: tuple | None = None
    total: float = 0.0

    def backward(self, scale: float = 1.0) -> dict[str, np.ndarray]:
        """Gradients of ``scale * total`` for every parameter; also stored on the ParameterSet."""
        model, params, emb = self.model, self.params, self.emb
        cfg = model.config
        w1, w2 = params["w1"], params["w2"]
        d_users = np.zeros_like(emb.users)
        d_items = np.zeros_like(emb.items)
        d_groups = np.zeros_like(emb.groups)
        d_w1 = np.zeros_like(w1)
        d_w2 = np.zeros_like(w2)

        for task, d_table in (("user", d_users), ("group", d_groups)):
            triples, ent, pos_items, neg_items, cp, cn, dyp, dyn = self.rank_parts[task]
            if len(triples) == 0:
                continue
            for items, cache, dy, idx in ((pos_items, cp, dyp, triples.pos), (neg_items, cn, dyn, triples.neg)):
                d_ent, d_it, gw1, gw2 = mlp_backward(cache, ent, items, w1, w2, dy * scale)
                np.add.at(d_table, triples.entity, d_ent)
                np.add.at(d_items, idx, d_it)
                d_w1 += gw1
                d_w2 += gw2

        if self.align_grads is not None:
            dg, dc = self.align_grads
            coef = scale * cfg.lambda_align
            d_groups += coef * dg
            d_vert = common_preferences_backward(self.common, model.members, coef * dc, model.num_vertices)
            nu = emb.users.shape[0]
            d_users += d_vert[:nu]
            d_items += d_vert[nu:]

        grads = propagate_backward(self.prop_cache, params, model.ops, d_users, d_items, d_groups)
        grads["w1"] = d_w1
        grads["w2"] = d_w2
        grads = {k: grads[k] for k in PARAM_NAMES}
        params.set_grads(grads)
        return grads


def backward(graph: LossGraph) -> dict[str, np.ndarray]:
    return graph.backward()
