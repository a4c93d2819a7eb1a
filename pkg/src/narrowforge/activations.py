"""Activation zoo.

Each supported activation is either ReLU itself or one of the smooth /
parametric shapes that can imitate ReLU arbitrarily well (scaling trick or
iterated application).  A network carries exactly one activation
configuration; mixing shapes inside one network is not allowed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf as _erf

from .errors import NarrowforgeError

__all__ = [
    "Activation",
    "ACTIVATION_KINDS",
    "act_code",
    "relu",
    "identity",
]

# Integer codes shared with the compiled kernels.
_CODES = {
    "identity": 0,
    "relu": 1,
    "leaky_relu": 2,
    "softplus": 3,
    "elu": 4,
    "celu": 5,
    "selu": 6,
    "gelu": 7,
    "silu": 8,
    "mish": 9,
}

ACTIVATION_KINDS = tuple(_CODES)

_MONOTONE = {
    "identity",
    "relu",
    "leaky_relu",
    "softplus",
    "elu",
    "celu",
    "selu",
}

_SELU_LAMBDA = 1.0507009873554805
_SELU_ALPHA = 1.6732632423543772


def _validate(kind: str, params: tuple[float, ...]) -> tuple[float, ...]:
    if kind not in _CODES:
        raise NarrowforgeError(f"unknown activation kind {kind!r}")
    if kind in ("identity", "relu", "gelu", "silu", "mish"):
        if params:
            raise NarrowforgeError(f"{kind} takes no parameters")
        return ()
    if kind == "leaky_relu":
        (alpha,) = params if params else (0.01,)
        if not 0.0 < alpha < 1.0:
            raise NarrowforgeError("leaky_relu slope must lie in (0, 1)")
        return (float(alpha),)
    if kind == "softplus":
        (beta,) = params if params else (1.0,)
        if not beta > 0.0:
            raise NarrowforgeError("softplus sharpness must be positive")
        return (float(beta),)
    if kind in ("elu", "celu"):
        (alpha,) = params if params else (1.0,)
        if not alpha > 0.0:
            raise NarrowforgeError(f"{kind} scale must be positive")
        return (float(alpha),)
    if kind == "selu":
        if not params:
            params = (_SELU_LAMBDA, _SELU_ALPHA)
        lam, alpha = params
        if not (lam > 1.0 and alpha > 0.0):
            raise NarrowforgeError("selu needs lambda > 1 and alpha > 0")
        return (float(lam), float(alpha))
    raise NarrowforgeError(f"unknown activation kind {kind!r}")


def _softplus(t: np.ndarray) -> np.ndarray:
    # max(t,0) + log1p(exp(-|t|)) never overflows
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass(frozen=True)
class Activation:
    """One activation configuration, fixed for a whole network."""

    kind: str
    params: tuple[float, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "params", _validate(self.kind, tuple(self.params)))

    @property
    def monotone(self) -> bool:
        return self.kind in _MONOTONE

    def scalar(self, x: float) -> float:
        """Reference scalar evaluation (mirrors the kernel formulas)."""
        return float(self(np.asarray([x], dtype=np.float64))[0])

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        k = self.kind
        if k == "identity":
            return x
        if k == "relu":
            return np.maximum(x, 0.0)
        if k == "leaky_relu":
            a = self.params[0]
            return np.where(x >= 0.0, x, a * x)
        if k == "softplus":
            b = self.params[0]
            return _softplus(b * x) / b
        if k == "elu":
            a = self.params[0]
            return np.where(x > 0.0, x, a * np.expm1(np.minimum(x, 0.0)))
        if k == "celu":
            a = self.params[0]
            return np.where(x > 0.0, x, a * np.expm1(np.minimum(x, 0.0) / a))
        if k == "selu":
            lam, a = self.params
            return lam * np.where(x > 0.0, x, a * np.expm1(np.minimum(x, 0.0)))
        if k == "gelu":
            cdf = 0.5 * (1.0 + _erf(x / math.sqrt(2.0)))
            return x * cdf
        if k == "silu":
            return x * _sigmoid(x)
        if k == "mish":
            return x * np.tanh(_softplus(x))
        raise NarrowforgeError(f"unknown activation kind {k!r}")


def act_code(act: Activation) -> tuple[int, float, float]:
    """(code, p0, p1) triple consumed by the evaluation kernels."""
    p = act.params
    p0 = p[0] if len(p) > 0 else 0.0
    p1 = p[1] if len(p) > 1 else 0.0
    return _CODES[act.kind], p0, p1


def relu() -> Activation:
    return Activation("relu")


def identity() -> Activation:
    return Activation("identity")
