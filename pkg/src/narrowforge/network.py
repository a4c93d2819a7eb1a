"""Core network representation.

A network is a chain of affine layers; every layer except the last may be
followed by the network's activation.  Width is the largest *hidden* layer
dimension, so a bare affine map has width zero.  All evaluation funnels
through :mod:`narrowforge.backend` which picks the compiled or the pure
numpy path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .activations import Activation, act_code, relu
from .errors import DimensionError, NarrowforgeError

__all__ = [
    "AffineLayer",
    "Network",
    "activation_eval",
    "eval_network",
    "width",
    "compose",
    "affine_network",
]


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AffineLayer:
    """x -> W x + b, optionally followed by the network activation."""

    W: np.ndarray
    b: np.ndarray
    apply_activation: bool = True

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64)
        if W.ndim != 2:
            raise DimensionError("layer weight must be a 2-d matrix")
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if b.shape[0] != W.shape[0]:
            raise DimensionError("bias length must match output dimension")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise NarrowforgeError("layer weights must be finite")
        object.__setattr__(self, "W", _freeze(W))
        object.__setattr__(self, "b", _freeze(b))

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]


@dataclass(frozen=True, eq=False)
class Network:
    """Immutable chain of affine layers with a single activation shape."""

    layers: tuple[AffineLayer, ...]
    activation: Activation

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise NarrowforgeError("a network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DimensionError(
                    f"layer chain broken: {prev.out_dim} -> {nxt.in_dim}"
                )
        if layers[-1].apply_activation:
            raise NarrowforgeError("the final layer is never activated")
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def depth(self) -> int:
        return len(self.layers)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return eval_network(self, x)


def activation_eval(act: Activation, x: np.ndarray) -> np.ndarray:
    """Apply one activation elementwise (reference path, always numpy)."""
    return act(np.asarray(x, dtype=np.float64))


def width(net: Network) -> int:
    """Largest hidden dimension; a single affine layer has width 0."""
    dims = [layer.out_dim for layer in net.layers[:-1]]
    return max(dims) if dims else 0


def eval_network(net: Network, x: np.ndarray) -> np.ndarray:
    """Evaluate at one point (dx,) or a batch (N, dx)."""
    from . import backend  # late import: backend pulls in numba lazily

    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise DimensionError(
            f"expected input dimension {net.input_dim}, got shape {x.shape}"
        )
    out = backend.forward_batch(net, x)
    return out[0] if single else out


def affine_network(W: np.ndarray, b: np.ndarray, activation: Activation | None = None) -> Network:
    """Single affine layer wrapped as a (width 0) network."""
    return Network(
        layers=(AffineLayer(W=W, b=b, apply_activation=False),),
        activation=activation if activation is not None else relu(),
    )


def _merge_affine(first: AffineLayer, second: AffineLayer) -> AffineLayer:
    # (x -> W1 x + b1) then (y -> W2 y + b2), no activation between
    W = second.W @ first.W
    b = second.W @ first.b + second.b
    return AffineLayer(W=W, b=b, apply_activation=second.apply_activation)


def compose(g: Network, h: Network) -> Network:
    """h after g.  The junction affines are merged, so no hidden layer of
    dimension g.output_dim appears unless an activation forces one."""
    if g.output_dim != h.input_dim:
        raise DimensionError(
            f"cannot compose: {g.output_dim} -> {h.input_dim} mismatch"
        )
    g_active = any(l.apply_activation for l in g.layers)
    h_active = any(l.apply_activation for l in h.layers)
    if g_active and h_active and g.activation != h.activation:
        # A pure affine factor carries no activated layer; any shape is fine
        # there.  Two genuinely activated factors must agree.
        raise NarrowforgeError("cannot mix activation shapes in one network")
    act = g.activation if g_active else h.activation
    last = g.layers[-1]
    # The final layer of a valid network is never activated, so merging is
    # always possible.
    merged = _merge_affine(last, h.layers[0])
    layers = g.layers[:-1] + (merged,) + h.layers[1:]
    return Network(layers=layers, activation=act)


def compose_all(nets: Sequence[Network]) -> Network:
    out = nets[0]
    for nxt in nets[1:]:
        out = compose(out, nxt)
    return out


def pack(net: Network):
    """Flatten a network into plain arrays for the evaluation kernels.

    Returns (dims, offs_w, offs_b, weights, biases, actflags, code, p0, p1)
    where dims[i] is the input dimension of layer i and dims[-1] the output
    dimension.  The result is cached on the (immutable) network.
    """
    cached = getattr(net, "_packed", None)
    if cached is not None:
        return cached
    L = len(net.layers)
    dims = np.empty(L + 1, dtype=np.int64)
    dims[0] = net.input_dim
    for i, layer in enumerate(net.layers):
        dims[i + 1] = layer.out_dim
    offs_w = np.zeros(L + 1, dtype=np.int64)
    offs_b = np.zeros(L + 1, dtype=np.int64)
    for i, layer in enumerate(net.layers):
        offs_w[i + 1] = offs_w[i] + layer.W.size
        offs_b[i + 1] = offs_b[i] + layer.b.size
    weights = np.empty(offs_w[-1], dtype=np.float64)
    biases = np.empty(offs_b[-1], dtype=np.float64)
    for i, layer in enumerate(net.layers):
        weights[offs_w[i] : offs_w[i + 1]] = layer.W.reshape(-1)
        biases[offs_b[i] : offs_b[i + 1]] = layer.b
    actflags = np.array(
        [1 if l.apply_activation else 0 for l in net.layers], dtype=np.int8
    )
    code, p0, p1 = act_code(net.activation)
    packed = (dims, offs_w, offs_b, weights, biases, actflags, code, p0, p1)
    object.__setattr__(net, "_packed", packed)
    return packed
