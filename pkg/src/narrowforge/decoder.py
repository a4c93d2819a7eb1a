"""Codeword grids and the networks that decode them.

A vector in [0,1]^d is stored as a single scalar by quantizing every
coordinate to a fixed number of bits and concatenating the bit fields,
most significant coordinate first.  Decoding networks recover the
coordinates with narrow ReLU stacks: a staircase built from max-min
clips extracts one coordinate's bits per stage.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import (
    BitBudgetExceeded,
    DeadZoneTooWide,
    DomainViolation,
    DuplicateCodewords,
    NarrowforgeError,
    VerificationFailed,
)
from .activations import relu
from .network import AffineLayer, Network, compose, eval_network

__all__ = [
    "quantize",
    "encode_vector",
    "decode_scalar",
    "pwl_network",
    "maxmin_network",
    "bit_extractor",
    "decoder_network",
    "memorizing_decoder",
]

MAX_TOTAL_BITS = 52


def quantize(x, bits: int):
    """Snap to the grid {0, 2^-bits, ..., 1 - 2^-bits}, rounding down."""
    if bits < 1:
        raise NarrowforgeError("bit count must be at least 1")
    x = np.asarray(x, dtype=np.float64)
    n = 1 << bits
    idx = np.clip(np.floor(x * n), 0, n - 1).astype(np.int64)
    out = idx.astype(np.float64) / n
    return float(out) if out.ndim == 0 else out


def encode_vector(v, bits: int) -> float:
    """Concatenate per-coordinate bit fields into one scalar.

    The first coordinate occupies the most significant field, so the
    result equals sum_j idx_j 2^(-j*bits) with idx_j the quantized cell
    index of coordinate j.  Exact while d*bits stays within the float
    mantissa.
    """
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    d = v.shape[0]
    if d * bits > MAX_TOTAL_BITS:
        raise BitBudgetExceeded(f"{d} coordinates at {bits} bits exceed the mantissa")
    n = 1 << bits
    idx = np.clip(np.floor(v * n), 0, n - 1).astype(np.int64)
    acc = 0
    for j in range(d):
        acc = (acc << bits) | int(idx[j])
    return float(acc) / float(1 << (d * bits))


def decode_scalar(c: float, d: int, bits: int) -> np.ndarray:
    """Invert encode_vector on grid scalars."""
    if d * bits > MAX_TOTAL_BITS:
        raise BitBudgetExceeded(f"{d} coordinates at {bits} bits exceed the mantissa")
    total = 1 << (d * bits)
    scaled = float(c) * total
    acc = int(round(scaled))
    if not (0 <= acc < total) or abs(scaled - acc) > 1e-6:
        raise DomainViolation(f"{c!r} is not a {d}x{bits}-bit codeword")
    n = 1 << bits
    out = np.empty(d)
    for j in range(d - 1, -1, -1):
        out[j] = (acc & (n - 1)) / n
        acc >>= bits
    return out


# ---------------------------------------------------------------------------
# piecewise linear compiler
# ---------------------------------------------------------------------------


def pwl_network(knots, values) -> Network:
    """Width-2 ReLU network equal to the piecewise linear interpolant on
    [knots[0], knots[-1]].

    Left of the interval the output is constant, right of it the last
    piece extends linearly.  One lane carries the ReLU-truncated
    coordinate relative to the latest knot, the other accumulates the
    function; each interior knot costs one hidden layer.
    """
    x = np.asarray(knots, dtype=np.float64).reshape(-1)
    y = np.asarray(values, dtype=np.float64).reshape(-1)
    if x.shape != y.shape or x.shape[0] < 1:
        raise NarrowforgeError("knots and values must match and be nonempty")
    if x.shape[0] == 1:
        return Network(
            layers=(AffineLayer(W=np.zeros((1, 1)), b=np.array([y[0]]),
                                apply_activation=False),),
            activation=relu(),
        )
    if np.any(np.diff(x) <= 0.0):
        raise DomainViolation("knots must be strictly increasing")
    s = x[0]
    t = x - s
    X = t[-1]
    slopes = np.diff(y) / np.diff(t)
    # merge consecutive pieces with identical slope
    keep = np.concatenate([[True], slopes[1:] != slopes[:-1]])
    a = slopes[keep]
    t_left = t[:-1][keep]
    y_left = y[:-1][keep]
    b = y_left - a * t_left
    P = a.shape[0]
    K = float(np.min(np.minimum(b, a * X + b)))

    layers = [
        AffineLayer(W=np.array([[1.0], [1.0]]), b=np.array([-s, -s]),
                    apply_activation=True)
    ]
    for p in range(1, P):
        dt = t_left[p] - t_left[p - 1]
        if p == 1:
            W = np.array([[1.0, 0.0], [a[0], 0.0]])
            bias = np.array([-dt, b[0] - K])
        else:
            W = np.array([[1.0, 0.0], [a[p - 1] - a[p - 2], 1.0]])
            bias = np.array([-dt, 0.0])
        layers.append(AffineLayer(W=W, b=bias, apply_activation=True))
    if P == 1:
        out = AffineLayer(W=np.array([[a[0], 0.0]]), b=np.array([b[0]]),
                          apply_activation=False)
    else:
        out = AffineLayer(W=np.array([[a[P - 1] - a[P - 2], 1.0]]),
                          b=np.array([K]), apply_activation=False)
    layers.append(out)
    net = Network(layers=tuple(layers), activation=relu())

    probe = np.unique(np.concatenate([x, np.linspace(x[0], x[-1], 257)]))
    want = np.interp(probe, x, y)
    got = eval_network(net, probe[:, None])[:, 0]
    scale = max(1.0, float(np.max(np.abs(want))))
    if np.max(np.abs(got - want)) > 1e-9 * scale:
        raise VerificationFailed("compiled interpolant disagrees with its data")
    return net


# ---------------------------------------------------------------------------
# max-min strings
# ---------------------------------------------------------------------------


def maxmin_network(affines, ops, interval=(0.0, 1.0), carry_input: bool = False) -> Network:
    """Width-2 ReLU network evaluating a max-min string of affine maps.

    affines: list of (a, b) scalars defining h_i(x) = a*x + b.
    ops: list of "max"/"min", one per affine after the first, applied as
    y <- op(h_i(x), y) left to right.
    carry_input: emit (x, y) instead of y alone.

    Valid for x >= interval[0]; the input lane rides through every ReLU
    shifted to stay nonnegative.
    """
    affines = [(float(p), float(q)) for p, q in affines]
    ops = list(ops)
    if len(ops) != len(affines) - 1:
        raise NarrowforgeError("need exactly one op per affine after the first")
    lo = float(interval[0])
    o = max(0.0, -lo)
    # running description of the true value: y = sign*lane2 + c1*lane1 + c0
    a1, b1 = affines[0]
    sign, c1, c0 = 1.0, a1, b1 - a1 * o
    layers = [
        AffineLayer(W=np.array([[1.0], [0.0]]), b=np.array([o, 0.0]),
                    apply_activation=True)
    ]
    # entry lane2 is ReLU(0) = 0, correct only with zero weight; real value
    # starts folded into (c1, c0)
    for op, (ga, gb) in zip(ops, affines[1:]):
        g1, g0 = ga, gb - ga * o
        if op == "max":
            W = np.array([[1.0, 0.0], [c1 - g1, sign]])
            bias = np.array([0.0, c0 - g0])
            sign, c1, c0 = 1.0, g1, g0
        elif op == "min":
            W = np.array([[1.0, 0.0], [g1 - c1, -sign]])
            bias = np.array([0.0, g0 - c0])
            sign, c1, c0 = -1.0, g1, g0
        else:
            raise NarrowforgeError(f"unknown op {op!r}")
        layers.append(AffineLayer(W=W, b=bias, apply_activation=True))
    if carry_input:
        W = np.array([[1.0, 0.0], [c1, sign]])
        bias = np.array([-o, c0])
    else:
        W = np.array([[c1, sign]])
        bias = np.array([c0])
    layers.append(AffineLayer(W=W, b=bias, apply_activation=False))
    return Network(layers=tuple(layers), activation=relu())


def _clamp01_network() -> Network:
    # min(max(x, 0), 1) = 1 - ReLU(1 - ReLU(x)), width 1
    return Network(
        layers=(
            AffineLayer(W=np.array([[1.0]]), b=np.array([0.0]), apply_activation=True),
            AffineLayer(W=np.array([[-1.0]]), b=np.array([1.0]), apply_activation=True),
            AffineLayer(W=np.array([[-1.0]]), b=np.array([1.0]), apply_activation=False),
        ),
        activation=relu(),
    )


def bit_extractor(bits: int, dead_zone: float) -> Network:
    """Width-2 network splitting x into (q(x), 2^bits (x - q(x))) with q
    the bits-bit floor quantizer.

    Exact away from the dead zones (i 2^-bits - dead_zone, i 2^-bits);
    globally the output stays inside [0, 1 - 2^-bits] x [0, 1].
    """
    if bits < 1:
        raise NarrowforgeError("bit count must be at least 1")
    step = 2.0 ** -bits
    if not (0.0 < dead_zone < step):
        raise DeadZoneTooWide(f"dead zone must sit inside one step of {step}")
    n_steps = 1 << bits
    affines = [(0.0, 0.0)]
    ops = []
    slope = step / dead_zone
    for level in range(1, n_steps):
        edge = level * step
        affines.append((slope, slope * (dead_zone - edge) + (level - 1) * step))
        ops.append("max")
        affines.append((0.0, edge))
        ops.append("min")
    stair = maxmin_network(affines, ops, interval=(0.0, 1.0), carry_input=True)
    split = Network(
        layers=(
            AffineLayer(
                W=np.array([[0.0, 1.0], [2.0 ** bits, -(2.0 ** bits)]]),
                b=np.zeros(2),
                apply_activation=False,
            ),
        ),
        activation=relu(),
    )
    return compose(compose(_clamp01_network(), stair), split)


def _with_passthrough(net: Network, n_pass: int) -> Network:
    """Prefix n_pass identity lanes onto every layer of net.

    The carried lanes cross each ReLU unchanged, so they must hold
    nonnegative values whenever net's hidden layers fire.
    """
    if n_pass == 0:
        return net
    layers = []
    for layer in net.layers:
        dout, din = layer.W.shape
        W = np.zeros((n_pass + dout, n_pass + din))
        W[:n_pass, :n_pass] = np.eye(n_pass)
        W[n_pass:, n_pass:] = layer.W
        b = np.concatenate([np.zeros(n_pass), layer.b])
        layers.append(AffineLayer(W=W, b=b, apply_activation=layer.apply_activation))
    return Network(layers=tuple(layers), activation=relu())


def decoder_network(dy: int, bits: int) -> Network:
    """Map a concatenated codeword scalar back to its dy coordinates.

    Width max(dy, 2) for dy >= 2 via dy-1 chained extractor stages with
    finished coordinates riding along; for dy = 1 a clamp suffices since
    codewords decode to themselves.  The image always stays in [0,1]^dy.
    """
    if dy < 1:
        raise NarrowforgeError("output dimension must be positive")
    if dy * bits > MAX_TOTAL_BITS:
        raise BitBudgetExceeded(f"{dy} coordinates at {bits} bits exceed the mantissa")
    if dy == 1:
        return _clamp01_network()
    dead = 2.0 ** -min(dy * bits + 2, MAX_TOTAL_BITS)
    ext = bit_extractor(bits, dead)
    stages = []
    for j in range(dy - 1):
        stages.append(_with_passthrough(ext, j))
    net = stages[0]
    for stage in stages[1:]:
        net = compose(net, stage)
    return net


# ---------------------------------------------------------------------------
# memorizing decoder
# ---------------------------------------------------------------------------


def memorizing_decoder(codewords, targets, p: float, gamma: float):
    """Width-max(dy,2) network sending scalar codewords near their targets.

    codewords: (k,) distinct reals.  targets: (k, dy) points in [0,1]^dy.
    The built network f satisfies ||f(c_i) - v_i||_p <= gamma for every i,
    by quantizing each target to enough bits and memorizing the quantized
    codes with a piecewise linear input stage.  Returns (network, bits).
    """
    c = np.asarray(codewords, dtype=np.float64).reshape(-1)
    V = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if V.shape[0] != c.shape[0]:
        raise NarrowforgeError("codeword/target counts disagree")
    if gamma <= 0.0:
        raise NarrowforgeError("tolerance must be positive")
    k, dy = V.shape
    if np.any(V < 0.0) or np.any(V > 1.0):
        raise DomainViolation("targets must lie in the unit box")
    order = np.argsort(c)
    c = c[order]
    V = V[order]
    if k >= 2 and np.min(np.diff(c)) <= 0.0:
        raise DuplicateCodewords("codewords must be pairwise distinct")

    bits = max(1, math.ceil(math.log2(dy ** (1.0 / p) / gamma)))
    if dy * bits > MAX_TOTAL_BITS:
        raise BitBudgetExceeded(
            f"{dy} coordinates at {bits} bits exceed the mantissa"
        )
    guard = 2.0 ** -(dy * bits + 2)
    codes = np.array([encode_vector(v, bits) + guard for v in V])

    front = pwl_network(c, codes)
    net = compose(front, decoder_network(dy, bits))

    out = eval_network(net, c[:, None])
    diffs = np.abs(out - V)
    if math.isinf(p):
        err = float(np.max(diffs))
    else:
        err = float(np.max(np.sum(diffs ** p, axis=1) ** (1.0 / p)))
    if err > gamma:
        raise VerificationFailed(
            f"memorized decoder misses its tolerance: {err:.3e} > {gamma:.3e}"
        )
    return net, bits
