"""Trainable parameters, initialization, Adam and checkpoints."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

PARAM_NAMES = ("user_emb", "item_emb", "group_emb", "w_fuse", "w1", "w2")
MLP_HIDDEN = 8
CHECKPOINT_FORMAT = "aligngroup-checkpoint"
CHECKPOINT_VERSION = 1


class NonFiniteError(FloatingPointError):
    """A parameter, gradient or intermediate became NaN or infinite."""


@dataclass
class TrainConfig:
    d: int = 32
    layers: int = 3
    tau: float = 0.2
    lambda_align: float = 0.1
    lr: float = 1e-3
    epochs: int = 200
    seed: int = 0
    strategy: str = "centroid"
    scope: str = "small"
    infonce_mode: str = "literal"
    bpr_mode: str = "literal"
    interrl_enabled: bool = True
    eval_neg_count: int = 100
    train_neg_per_pos: int = 1
    batch_size: int = 1024
    patience: int = 20
    val_fraction: float = 0.1
    pessimistic_ties: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.lambda_align < 0:
            raise ValueError("lambda_align must be >= 0")
        if self.d < 2:
            raise ValueError("d must be >= 2")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        for name in ("eval_neg_count", "train_neg_per_pos", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must be in [0, 1)")
        choices = {
            "strategy": ("centroid", "barycenter"),
            "scope": ("small", "big"),
            "infonce_mode": ("literal", "cross-pair"),
            "bpr_mode": ("literal", "log-sigmoid"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


class ParameterSet:
    """Named parameter tables with same-shaped gradient and Adam moment slots."""

    def __init__(self, values: dict[str, np.ndarray]):
        missing = set(PARAM_NAMES) - set(values)
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)}")
        self.values = {k: np.array(values[k], dtype=np.float64, copy=True) for k in PARAM_NAMES}
        self.grads = {k: np.zeros_like(v) for k, v in self.values.items()}
        self.m = {k: np.zeros_like(v) for k, v in self.values.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.values.items()}
        self.step = 0

    def __getitem__(self, name) -> np.ndarray:
        return self.values[name]

    def __iter__(self):
        return iter(PARAM_NAMES)

    @property
    def d(self) -> int:
        return self.values["user_emb"].shape[1]

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self.values.items()}

    def copy(self) -> "ParameterSet":
        out = ParameterSet(self.values)
        for k in PARAM_NAMES:
            out.grads[k][...] = self.grads[k]
            out.m[k][...] = self.m[k]
            out.v[k][...] = self.v[k]
        out.step = self.step
        return out

    def set_grads(self, grads: dict[str, np.ndarray]) -> None:
        for k in PARAM_NAMES:
            g = grads[k]
            if g.shape != self.values[k].shape:
                raise ValueError(f"gradient shape {g.shape} does not match {k} {self.values[k].shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for parameter {k}")
            self.grads[k][...] = g

    def check_finite(self) -> None:
        for k, v in self.values.items():
            if not np.all(np.isfinite(v)):
                raise NonFiniteError(f"non-finite value in parameter {k}")


def xavier_uniform(rng, n_rows, n_cols) -> np.ndarray:
    bound = np.sqrt(6.0 / (n_rows + n_cols))
    return rng.uniform(-bound, bound, size=(n_rows, n_cols))


def init_parameters(config: TrainConfig, num_users, num_items, num_groups) -> ParameterSet:
    """Xavier-uniform embedding tables, N(0, 0.1) for the fusion and MLP weights."""
    rng = np.random.default_rng(config.seed)
    d = config.d
    return ParameterSet({
        "user_emb": xavier_uniform(rng, num_users, d),
        "item_emb": xavier_uniform(rng, num_items, d),
        "group_emb": xavier_uniform(rng, num_groups, d),
        "w_fuse": rng.normal(0.0, 0.1, size=(2 * d, d)),
        "w1": rng.normal(0.0, 0.1, size=(d, MLP_HIDDEN)),
        "w2": rng.normal(0.0, 0.1, size=(MLP_HIDDEN, 1)),
    })


class Adam:
    """Bias-corrected Adam acting in place on a ParameterSet's gradient slots."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self, params: ParameterSet) -> None:
        params.step += 1
        t = params.step
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for k in PARAM_NAMES:
            g = params.grads[k]
            m, v = params.m[k], params.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            if not np.all(np.isfinite(update)):
                raise NonFiniteError(f"non-finite Adam update for parameter {k}")
            params.values[k] -= update


def adam_step(params: ParameterSet, lr, beta1=0.9, beta2=0.999, eps=1e-8) -> ParameterSet:
    Adam(lr, beta1, beta2, eps).step(params)
    return params


def save_checkpoint(path, params: ParameterSet, config: TrainConfig, rng_state=None, extra=None) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "adam_step": params.step,
        "rng_state": rng_state,
        "extra": extra or {},
    }
    arrays = {"header": np.array(json.dumps(header, sort_keys=True))}
    for k in PARAM_NAMES:
        arrays[f"param/{k}"] = np.ascontiguousarray(params.values[k])
        arrays[f"adam_m/{k}"] = np.ascontiguousarray(params.m[k])
        arrays[f"adam_v/{k}"] = np.ascontiguousarray(params.v[k])
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[ParameterSet, TrainConfig, dict]:
    """Return ``(params, config, header)``; raises FileNotFoundError or ValueError."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not an aligngroup checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        params = ParameterSet({k: z[f"param/{k}"] for k in PARAM_NAMES})
        for k in PARAM_NAMES:
            params.m[k][...] = z[f"adam_m/{k}"]
            params.v[k][...] = z[f"adam_v/{k}"]
    params.step = header["adam_step"]
    return params, TrainConfig.from_dict(header["config"]), header
