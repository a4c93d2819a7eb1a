"""Evaluation backend selection.

Two implementations of every hot loop: a compiled numba kernel and a pure
numpy path.  The NARROWFORGE_BACKEND environment variable picks one
("numba" or "numpy"); unset means numba when it imports, numpy otherwise.
Per-sample results are independent of the batch they ran in, and neither
path reorders reductions, so a fixed backend is bit-reproducible.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import NarrowforgeError
from .network import Network, pack

__all__ = ["backend_name", "forward_batch", "seq_forward_arrays"]

_ENV = "NARROWFORGE_BACKEND"

try:  # compile lazily, import eagerly
    from . import _kernels

    _HAVE_NUMBA = True
except Exception:  # pragma: no cover - exercised only without numba
    _kernels = None
    _HAVE_NUMBA = False


def backend_name() -> str:
    """Resolve the active backend from the environment."""
    choice = os.environ.get(_ENV, "").strip().lower()
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if not _HAVE_NUMBA:
            raise NarrowforgeError("NARROWFORGE_BACKEND=numba but numba is unavailable")
        return "numba"
    if choice not in ("", "auto"):
        raise NarrowforgeError(f"unknown backend {choice!r}")
    return "numba" if _HAVE_NUMBA else "numpy"


def _forward_numpy(net: Network, X: np.ndarray) -> np.ndarray:
    act = net.activation
    out = X
    for layer in net.layers:
        out = out @ layer.W.T + layer.b
        if layer.apply_activation:
            out = act(out)
    return out


def forward_batch(net: Network, X: np.ndarray) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if backend_name() == "numpy":
        return _forward_numpy(net, X)
    dims, offs_w, offs_b, weights, biases, actflags, code, p0, p1 = pack(net)
    out = np.empty((X.shape[0], net.output_dim), dtype=np.float64)
    _kernels.forward_kernel(
        dims, offs_w, offs_b, weights, biases, actflags, code, p0, p1, X, out
    )
    return out


def _seq_forward_numpy(packed, X: np.ndarray, activation) -> np.ndarray:
    kinds, acts, d_in_arr, d_state_arr, d_out_arr, offsets, flat = packed
    N, T, _ = X.shape
    stream = X
    for c in range(kinds.shape[0]):
        din = int(d_in_arr[c])
        dst = int(d_state_arr[c])
        dout = int(d_out_arr[c])
        W1 = flat[offsets[c, 0] : offsets[c, 0] + dst * dst].reshape(dst, dst)
        W2 = flat[offsets[c, 1] : offsets[c, 1] + dst * din].reshape(dst, din)
        b = flat[offsets[c, 2] : offsets[c, 2] + dst]
        if kinds[c] == 0:
            h = np.zeros((N, dst))
            outs = np.empty((N, T, dst))
            for t in range(T):
                z = h @ W1.T + stream[:, t, :] @ W2.T + b
                h = activation(z) if acts[c] == 1 else z
                outs[:, t, :] = h
            stream = outs
        else:
            W1b = flat[offsets[c, 3] : offsets[c, 3] + dst * dst].reshape(dst, dst)
            W2b = flat[offsets[c, 4] : offsets[c, 4] + dst * din].reshape(dst, din)
            bb = flat[offsets[c, 5] : offsets[c, 5] + dst]
            A = flat[offsets[c, 6] : offsets[c, 6] + dout * dst].reshape(dout, dst)
            B = flat[offsets[c, 7] : offsets[c, 7] + dout * dst].reshape(dout, dst)
            hf = np.zeros((N, dst))
            fwd = np.empty((N, T, dst))
            for t in range(T):
                z = hf @ W1.T + stream[:, t, :] @ W2.T + b
                hf = activation(z) if acts[c] == 1 else z
                fwd[:, t, :] = hf
            hb = np.zeros((N, dst))
            outs = np.empty((N, T, dout))
            for t in range(T - 1, -1, -1):
                z = hb @ W1b.T + stream[:, t, :] @ W2b.T + bb
                hb = activation(z) if acts[c] == 1 else z
                outs[:, t, :] = fwd[:, t, :] @ A.T + hb @ B.T
            stream = outs
    return stream


def seq_forward_arrays(packed, X: np.ndarray, activation, act_triple) -> np.ndarray:
    """Evaluate a packed recurrent stack on a batch of sequences."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    kinds, acts, d_in_arr, d_state_arr, d_out_arr, offsets, flat = packed
    if backend_name() == "numpy":
        return _seq_forward_numpy(packed, X, activation)
    code, p0, p1 = act_triple
    d_last = int(d_out_arr[-1]) if kinds.shape[0] else X.shape[2]
    out = np.empty((X.shape[0], X.shape[1], d_last), dtype=np.float64)
    _kernels.seq_forward_kernel(
        kinds, acts, d_in_arr, d_state_arr, d_out_arr, offsets, flat, code, p0, p1, X, out
    )
    return out
