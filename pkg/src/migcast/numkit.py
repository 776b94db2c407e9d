"""Dense numerical kernels shared by every model.

Parameter sets are plain ``dict[str, np.ndarray]`` of float64 arrays. The
optimizer, losses and gradient checker all operate on that representation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import DomainError, NumericalError, ParameterError, ShapeError

ParamSet = dict[str, np.ndarray]


def as_matrix(values) -> np.ndarray:
    """Coerce ``values`` to a finite 2-D float64 array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got {arr.ndim} dimensions")
    _require_finite(arr)
    return arr


def _require_finite(arr: np.ndarray, what: str = "result") -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{what} contains NaN or Inf")


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    _require_finite(out)
    return out


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: ParamSet = field(default_factory=dict)
    v: ParamSet = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ParameterError("Adam betas must lie in (0, 1)")
        if self.lr <= 0 or self.epsilon <= 0:
            raise ParameterError("learning rate and epsilon must be positive")
        if self.step < 0:
            raise ParameterError("step must be nonnegative")

    @classmethod
    def for_params(cls, params: Mapping[str, np.ndarray], **kwargs) -> "AdamState":
        state = cls(**kwargs)
        state.m = {k: np.zeros_like(p) for k, p in params.items()}
        state.v = {k: np.zeros_like(p) for k, p in params.items()}
        return state


def adam_step(params: ParamSet, grads: Mapping[str, np.ndarray], state: AdamState) -> None:
    """Apply one bias-corrected Adam update to ``params`` in place.

    Moment accumulators missing from ``state`` are created as zeros, so a
    fresh ``AdamState()`` can be used directly.
    """
    if set(grads) != set(params):
        raise ShapeError("gradient keys do not match parameter keys")
    for k, p in params.items():
        if grads[k].shape != p.shape:
            raise ShapeError(f"gradient {k!r} has shape {grads[k].shape}, expected {p.shape}")
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        elif state.m[k].shape != p.shape or state.v[k].shape != p.shape:
            raise ShapeError(f"optimizer state for {k!r} does not match parameter shape")

    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for k, p in params.items():
        g = grads[k]
        m = state.m[k]
        v = state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        # zero moments give a zero update, so parameters stay bit-identical
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)


def clip_by_global_norm(grads: ParamSet, max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# ---------------------------------------------------------------- losses


class LossKind(str, enum.Enum):
    MAE = "mae"
    MSE = "mse"
    CPC = "cpc"

    @classmethod
    def parse(cls, value) -> "LossKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ParameterError(f"unknown loss kind {value!r}") from None


def _pair(predicted, target) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predicted, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ShapeError(f"length mismatch: {p.size} predictions vs {t.size} targets")
    if p.size == 0:
        raise ShapeError("loss needs at least one value")
    return p, t


def _cpc_parts(p: np.ndarray, t: np.ndarray) -> tuple[float, float]:
    if np.any(t < 0):
        raise DomainError("CPC loss requires nonnegative targets")
    common = float(np.sum(np.minimum(p, t)))
    total = float(np.sum(p) + np.sum(t))
    return common, total


def loss_value(kind, predicted, target) -> float:
    """MAE, MSE or ``1 - CPC`` of a whole sequence treated as one collection.

    CPC targets must be nonnegative. Predictions are not checked so the loss
    stays usable while an untrained network still emits negative values; the
    ``[0, 1]`` bound only holds when they are nonnegative too.
    """
    kind = LossKind.parse(kind)
    p, t = _pair(predicted, target)
    if kind is LossKind.MAE:
        return float(np.mean(np.abs(p - t)))
    if kind is LossKind.MSE:
        return float(np.mean((p - t) ** 2))
    common, total = _cpc_parts(p, t)
    if total == 0.0:
        if np.all(p == 0) and np.all(t == 0):
            return 0.0
        raise NumericalError("CPC loss undefined: predictions and targets sum to zero")
    return 1.0 - 2.0 * common / total


def loss_gradient(kind, predicted, target) -> np.ndarray:
    """Gradient of :func:`loss_value` with respect to each prediction.

    Kinks use the symmetric subgradient: 0 for MAE at ``p == t`` and the
    half-weight of the ``min`` branch for CPC ties.
    """
    kind = LossKind.parse(kind)
    p, t = _pair(predicted, target)
    n = p.size
    if kind is LossKind.MAE:
        return np.sign(p - t) / n
    if kind is LossKind.MSE:
        return 2.0 * (p - t) / n
    common, total = _cpc_parts(p, t)
    if total == 0.0:
        if np.all(p == 0) and np.all(t == 0):
            return np.zeros(n)
        raise NumericalError("CPC loss undefined: predictions and targets sum to zero")
    d_common = np.where(p < t, 1.0, np.where(p == t, 0.5, 0.0))
    return -2.0 * (d_common * total - common) / (total * total)


# ---------------------------------------------------------------- dropout


def dropout_mask(width, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability ``rate``, else ``1/(1-rate)``.

    ``width`` may be an int or a shape tuple.
    """
    if not (0.0 <= rate < 1.0):
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(width)
    keep = rng.random(width) >= rate
    return keep / (1.0 - rate)


# ---------------------------------------------------------------- gradient check

MAX_CHECKED_COORDS = 10_000


def grad_check(
    f: Callable[[ParamSet], float],
    params: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    h: float = 1e-5,
    max_coords: int = MAX_CHECKED_COORDS,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between ``analytic`` and central differences of ``f``.

    ``f`` receives a parameter dict holding copies of ``params`` with one
    coordinate perturbed. When the total parameter count exceeds
    ``max_coords``, a uniform random subsample of that many coordinates is
    checked (drawn from ``rng``, seed 0 by default).
    """
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    if set(analytic) != set(work):
        raise ShapeError("analytic gradient keys do not match parameter keys")
    coords = [(k, i) for k in sorted(work) for i in range(work[k].size)]
    for k in work:
        if np.shape(analytic[k]) != work[k].shape:
            raise ShapeError(f"analytic gradient {k!r} has the wrong shape")
    if len(coords) > max_coords:
        rng = rng if rng is not None else np.random.default_rng(0)
        picks = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[j] for j in sorted(picks)]

    worst = 0.0
    for k, i in coords:
        flat = work[k].reshape(-1)
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f(work)
        flat[i] = orig - h
        f_minus = f(work)
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericalError(f"objective is not finite when probing {k}[{i}]")
        # dividing by the realized step removes the rounding of orig +/- h;
        # f may return extended precision, which is kept until the end
        numeric = (f_plus - f_minus) / ((orig + h) - (orig - h))
        a = float(np.asarray(analytic[k]).reshape(-1)[i])
        err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        worst = max(worst, float(err))
    return worst
