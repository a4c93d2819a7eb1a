"""Codeword arithmetic and decoding networks."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from narrowforge.decoder import (
    bit_extractor,
    decode_scalar,
    decoder_network,
    encode_vector,
    maxmin_network,
    memorizing_decoder,
    pwl_network,
    quantize,
)
from narrowforge.errors import (
    BitBudgetExceeded,
    DeadZoneTooWide,
    DomainViolation,
    DuplicateCodewords,
)
from narrowforge.network import eval_network, width


def test_quantize_pinned_values():
    assert quantize(0.3, 2) == 0.25
    assert quantize(1.0, 3) == 0.875
    assert quantize(0.999, 3) == 0.875
    assert quantize(-0.2, 2) == 0.0
    assert quantize(0.25, 2) == 0.25
    got = quantize(np.array([0.0, 0.49, 0.5, 0.74]), 1)
    assert got.tolist() == [0.0, 0.0, 0.5, 0.5]


def test_quantize_idempotent():
    x = np.linspace(-0.3, 1.3, 257)
    q = quantize(x, 4)
    assert np.array_equal(quantize(q, 4), q)


def test_encode_pinned_values():
    # fields: floor(0.5*4)=2, floor(0.25*4)=1 -> (2<<2)|1 = 9 -> 9/16
    assert encode_vector([0.5, 0.25], 2) == 0.5625
    # fields 6,2,4 at 3 bits -> 404/512
    assert encode_vector([0.8, 0.3, 0.6], 3) == 0.7890625
    assert decode_scalar(0.5625, 2, 2).tolist() == [0.5, 0.25]
    assert decode_scalar(404 / 512, 3, 3).tolist() == [0.75, 0.25, 0.5]


@pytest.mark.parametrize("d,bits", [(1, 4), (2, 3), (3, 4), (2, 6)])
def test_encode_decode_roundtrip_exhaustive(d, bits):
    n = 1 << bits
    for acc in range(1 << (d * bits)):
        c = acc / (1 << (d * bits))
        v = decode_scalar(c, d, bits)
        assert encode_vector(v, bits) == c
        # field extraction agrees with integer arithmetic
        rest = acc
        for j in range(d - 1, -1, -1):
            assert v[j] == (rest & (n - 1)) / n
            rest >>= bits


def test_bit_budget_and_grid_validation():
    with pytest.raises(BitBudgetExceeded):
        encode_vector(np.full(7, 0.5), 8)
    with pytest.raises(BitBudgetExceeded):
        decode_scalar(0.5, 7, 8)
    with pytest.raises(DomainViolation):
        decode_scalar(0.3, 2, 2)
    with pytest.raises(DomainViolation):
        decode_scalar(1.25, 2, 2)


@given(
    st.integers(1, 3),
    st.integers(1, 4),
    st.integers(0, 10 ** 6),
)
@settings(max_examples=200, deadline=None)
def test_roundtrip_property(d, bits, raw):
    total = 1 << (d * bits)
    c = (raw % total) / total
    assert encode_vector(decode_scalar(c, d, bits), bits) == c


# ---------------------------------------------------------------------------
# piecewise linear compilation
# ---------------------------------------------------------------------------


def test_pwl_matches_interpolant_pinned():
    kx = np.array([0.0, 1.0, 2.0, 3.0])
    ky = np.array([0.0, -100.0, 0.0, 50.0])
    net = pwl_network(kx, ky)
    assert width(net) == 2
    probe = np.linspace(0.0, 3.0, 601)
    got = eval_network(net, probe[:, None])[:, 0]
    assert np.max(np.abs(got - np.interp(probe, kx, ky))) < 1e-9
    # knots themselves are exact up to float noise
    at_knots = eval_network(net, kx[:, None])[:, 0]
    assert np.max(np.abs(at_knots - ky)) < 1e-10


def test_pwl_random_instances():
    rng = np.random.default_rng(7)
    for _ in range(25):
        m = int(rng.integers(2, 12))
        kx = np.unique(rng.random(m) * 4 - 1)
        if kx.shape[0] < 2:
            continue
        ky = rng.normal(size=kx.shape[0]) * 10
        net = pwl_network(kx, ky)
        assert width(net) == 2
        probe = np.linspace(kx[0], kx[-1], 401)
        got = eval_network(net, probe[:, None])[:, 0]
        assert np.max(np.abs(got - np.interp(probe, kx, ky))) < 1e-8


def test_pwl_constant_and_validation():
    net = pwl_network([0.3], [2.5])
    assert eval_network(net, np.array([[0.0], [5.0]]))[:, 0].tolist() == [2.5, 2.5]
    with pytest.raises(DomainViolation):
        pwl_network([0.0, 0.5, 0.5, 1.0], [0.0, 1.0, 2.0, 3.0])


def test_pwl_extends_flat_left_linear_right():
    net = pwl_network([0.0, 1.0], [1.0, 3.0])
    out = eval_network(net, np.array([[-2.0], [0.0], [1.0], [2.0]]))[:, 0]
    assert out.tolist() == [1.0, 1.0, 3.0, 5.0]


@given(st.integers(0, 2 ** 30))
@settings(max_examples=60, deadline=None)
def test_pwl_property_matches_interp(seed):
    rng = np.random.default_rng(seed)
    kx = np.unique(np.round(rng.random(6), 3))
    if kx.shape[0] < 2:
        return
    ky = np.round(rng.normal(size=kx.shape[0]), 3)
    net = pwl_network(kx, ky)
    probe = np.linspace(kx[0], kx[-1], 101)
    got = eval_network(net, probe[:, None])[:, 0]
    assert np.max(np.abs(got - np.interp(probe, kx, ky))) < 1e-8


# ---------------------------------------------------------------------------
# max-min strings and bit extraction
# ---------------------------------------------------------------------------


def test_maxmin_string_matches_direct_evaluation():
    rng = np.random.default_rng(3)
    affines = [(float(a), float(b)) for a, b in rng.normal(size=(7, 2))]
    ops = [("max" if v > 0 else "min") for v in rng.normal(size=6)]
    net = maxmin_network(affines, ops, interval=(0.0, 1.0))
    assert width(net) == 2
    x = np.linspace(0.0, 1.0, 301)
    y = affines[0][0] * x + affines[0][1]
    for (a, b), op in zip(affines[1:], ops):
        h = a * x + b
        y = np.maximum(h, y) if op == "max" else np.minimum(h, y)
    got = eval_network(net, x[:, None])[:, 0]
    assert np.max(np.abs(got - y)) < 1e-10


def test_bit_extractor_pinned_example():
    net = bit_extractor(1, 0.1)
    out = eval_network(net, np.array([[0.7]]))[0]
    assert out[0] == pytest.approx(0.5, abs=1e-12)
    assert out[1] == pytest.approx(0.4, abs=1e-12)


def test_bit_extractor_accuracy_off_dead_zones():
    bits, dead = 3, 0.01
    net = bit_extractor(bits, dead)
    step = 2.0 ** -bits
    x = np.linspace(0.0, 1.0, 4001)
    frac = np.mod(x, step)
    in_dead = (frac > step - dead - 1e-12) & (frac < step - 1e-12) & (x < 1.0)
    keep = x[~in_dead]
    out = eval_network(net, keep[:, None])
    q = quantize(keep, bits)
    assert np.max(np.abs(out[:, 0] - q)) < 1e-7
    assert np.max(np.abs(out[:, 1] - (2.0 ** bits) * (keep - q))) < 1e-7


def test_bit_extractor_range_on_wild_inputs():
    bits = 2
    net = bit_extractor(bits, 0.05)
    rng = np.random.default_rng(11)
    wild = np.concatenate([rng.normal(scale=50, size=10_000),
                           np.linspace(-3, 3, 1000)])
    out = eval_network(net, wild[:, None])
    assert out[:, 0].min() >= 0.0
    assert out[:, 0].max() <= 1.0 - 2.0 ** -bits + 1e-12
    assert out[:, 1].min() >= 0.0
    assert out[:, 1].max() <= 1.0 + 1e-12


def test_bit_extractor_rejects_wide_dead_zone():
    with pytest.raises(DeadZoneTooWide):
        bit_extractor(2, 0.25)
    with pytest.raises(DeadZoneTooWide):
        bit_extractor(2, 0.3)


# ---------------------------------------------------------------------------
# decoders
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("dy,bits", [(1, 4), (2, 2), (2, 3), (3, 2), (3, 4)])
def test_decoder_network_exact_on_every_codeword(dy, bits):
    net = decoder_network(dy, bits)
    assert width(net) == (max(dy, 2) if dy > 1 else 1)
    codes = np.arange(1 << (dy * bits)) / (1 << (dy * bits))
    out = eval_network(net, codes[:, None])
    want = np.stack([decode_scalar(c, dy, bits) for c in codes])
    assert np.array_equal(out, want)


def test_decoder_network_range_on_wild_inputs():
    net = decoder_network(3, 3)
    rng = np.random.default_rng(2)
    wild = np.concatenate([rng.normal(scale=40, size=10_000),
                           np.linspace(-2, 2, 1000)])
    out = eval_network(net, wild[:, None])
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_memorizing_decoder_meets_tolerance():
    rng = np.random.default_rng(5)
    for dy, p, gamma in [(1, 1, 0.05), (2, 2, 0.08), (3, 1, 0.1), (3, 2, 0.06)]:
        k = int(rng.integers(3, 40))
        c = np.sort(rng.random(k) * 3 - 1)
        V = rng.random((k, dy))
        net, bits = memorizing_decoder(c, V, p=p, gamma=gamma)
        assert width(net) == max(dy, 2)
        out = eval_network(net, c[:, None])
        err = np.max(np.sum(np.abs(out - V) ** p, axis=1) ** (1.0 / p))
        assert err <= gamma
        assert dy ** (1.0 / p) * 2.0 ** -bits <= gamma


def test_memorizing_decoder_validation():
    with pytest.raises(DuplicateCodewords):
        memorizing_decoder([0.1, 0.1, 0.4], np.full((3, 2), 0.5), p=1, gamma=0.1)
    with pytest.raises(DomainViolation):
        memorizing_decoder([0.1, 0.6], np.array([[0.5, 1.5], [0.2, 0.2]]),
                           p=1, gamma=0.1)
    with pytest.raises(BitBudgetExceeded):
        memorizing_decoder([0.2, 0.7], np.random.default_rng(0).random((2, 7)),
                           p=1, gamma=1e-9)


def test_memorizing_decoder_single_codeword():
    net, bits = memorizing_decoder([0.5], np.array([[0.25, 0.75]]), p=2, gamma=0.01)
    out = eval_network(net, np.array([[0.5]]))[0]
    assert np.linalg.norm(out - [0.25, 0.75]) <= 0.01
