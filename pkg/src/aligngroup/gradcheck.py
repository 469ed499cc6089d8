"""Central finite-difference check of the reverse pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import AlignGroupModel, LossGraph
from .params import PARAM_NAMES, ParameterSet
from .scoring import TrainingPairBatch


def activation_pattern(graph: LossGraph) -> tuple:
    """Every piecewise branch taken by the forward pass.

    Two evaluations with equal patterns lie on the same smooth piece of the loss.
    """
    parts = []
    for task in ("user", "group"):
        _, _, _, _, cp, cn, _, _ = graph.rank_parts[task]
        parts += [cp.h > 0, cn.h > 0]
    if graph.common is not None and graph.common.argmax is not None:
        parts += [graph.common.argmax, graph.common.argmin]
    return tuple(parts)


def _same(p, q):
    return len(p) == len(q) and all(np.array_equal(a, b) for a, b in zip(p, q))


@dataclass
class GradCheckResult:
    max_rel_error: dict[str, float]
    kink_coordinates: int
    checked_coordinates: int

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values())


def check_gradients(model: AlignGroupModel, params: ParameterSet, batch: TrainingPairBatch, eps=1e-4,
                    fallback_eps=(1e-5, 1e-6, 1e-7), floor=1e-8) -> GradCheckResult:
    """Compare analytic gradients with central differences coordinate by coordinate.

    Relative error is |a - n| / max(|a|, |n|, floor). A coordinate whose +-eps
    evaluations take a different branch than the unperturbed point straddles a
    kink; it is re-measured with the largest fallback step that stays on one
    piece.
    """
    base = model.forward(params, batch)
    analytic = base.backward()
    base_pattern = activation_pattern(base)
    worst = {}
    kinks = 0
    total = 0

    def central(arr, idx, h):
        orig = arr[idx]
        arr[idx] = orig + h
        gp = model.forward(params, batch)
        arr[idx] = orig - h
        gm = model.forward(params, batch)
        arr[idx] = orig
        smooth = _same(activation_pattern(gp), base_pattern) and _same(activation_pattern(gm), base_pattern)
        return (gp.total - gm.total) / (2 * h), smooth

    for name in PARAM_NAMES:
        arr = params.values[name]
        err = 0.0
        for idx in np.ndindex(arr.shape):
            total += 1
            num, smooth = central(arr, idx, eps)
            if not smooth:
                kinks += 1
                for h in fallback_eps:
                    num, smooth = central(arr, idx, h)
                    if smooth:
                        break
            a = analytic[name][idx]
            err = max(err, abs(a - num) / max(abs(a), abs(num), floor))
        worst[name] = err
    return GradCheckResult(worst, kinks, total)
