import numpy as np
import pytest

from freqcast.fmoe import FmoeParams, gate, init_fmoe_params, lift, moe_forward
from freqcast.spectral import SpectralField, radial_band_index


def make_spec(rng, V=1, M=8, N=8):
    lats = np.linspace(90 - 90 / M, -90 + 90 / M, M)
    lons = np.arange(N) * (360.0 / N)
    return SpectralField(
        rng.normal(size=(V, M, N)),
        rng.normal(size=(V, M, N)),
        tuple(f"v{i}" for i in range(V)),
        lats,
        lons,
    )


def make_params(rng, M=8, N=8, d=4, E=2, B=3):
    return init_fmoe_params(rng, M, N, latent_dim=d, n_experts=E, n_bands=B, dtype=np.float64)


def gelu_ref(x):
    c = np.sqrt(2.0 / np.pi)
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x**3)))


def test_lift_zero_spectrum():
    rng = np.random.default_rng(0)
    params = make_params(rng)
    spec = make_spec(rng)
    zero = spec.with_planes(np.zeros_like(spec.re), np.zeros_like(spec.im), False)
    out = lift(zero, params)
    assert np.all(out.values == 0.0)  # zero bias by construction


def test_lift_identity_params():
    rng = np.random.default_rng(1)
    params = make_params(rng, d=2)
    params.lift_w = np.eye(2)
    params.lift_b = np.zeros(2)
    spec = make_spec(rng)
    out = lift(spec, params)
    assert np.allclose(out.values[..., 0], spec.re, atol=1e-12)
    assert np.allclose(out.values[..., 1], spec.im, atol=1e-12)


def test_lift_matches_matmul_oracle():
    rng = np.random.default_rng(2)
    params = make_params(rng, d=5)
    params.lift_b = rng.normal(size=5)
    spec = make_spec(rng, V=2)
    out = lift(spec, params)
    for v in range(2):
        for m in range(8):
            for n in range(8):
                expected = np.array([spec.re[v, m, n], spec.im[v, m, n]]) @ params.lift_w
                expected = expected + params.lift_b
                assert np.allclose(out.values[v, m, n], expected, rtol=1e-9)


def test_gate_uniform_when_zeroed():
    rng = np.random.default_rng(3)
    params = make_params(rng, E=4, B=3)
    spec = make_spec(rng)
    w = gate(spec, params)
    assert w.shape == (3, 4)
    assert np.allclose(w, 0.25, atol=1e-12)


def test_gate_single_expert_is_one():
    rng = np.random.default_rng(4)
    params = make_params(rng, E=1)
    w = gate(make_spec(rng), params)
    assert np.all(w == 1.0)


def test_gate_rows_sum_to_one():
    rng = np.random.default_rng(5)
    params = make_params(rng, E=3, B=4)
    params.gate_w = rng.normal(size=(4, 3))
    params.gate_b = rng.normal(size=(4, 3))
    w = gate(make_spec(rng), params)
    assert np.all(w >= 0.0)
    assert np.allclose(w.sum(axis=1), 1.0, atol=1e-6)


def test_moe_single_expert_collapse():
    rng = np.random.default_rng(6)
    params = make_params(rng, E=1, d=3)
    spec = make_spec(rng)
    out = moe_forward(spec, params)
    z = lift(spec, params).values
    flat = z.reshape(-1, 3)
    h = gelu_ref(flat @ params.expert_w1[0] + params.expert_b1[0])
    expected = (h @ params.expert_w2[0] + params.expert_b2[0]).reshape(z.shape)
    assert np.allclose(out.values, expected, atol=1e-12)


def test_moe_one_hot_gate_matches_selected_expert():
    rng = np.random.default_rng(7)
    params = make_params(rng, E=3, d=3)
    params.gate_b = np.zeros((3, 3))
    params.gate_b[:, 2] = 100.0  # softmax saturates on expert 2
    spec = make_spec(rng)
    out = moe_forward(spec, params)
    z = lift(spec, params).values.reshape(-1, 3)
    h = gelu_ref(z @ params.expert_w1[2] + params.expert_b1[2])
    expected = (h @ params.expert_w2[2] + params.expert_b2[2]).reshape(out.values.shape)
    assert np.max(np.abs(out.values - expected)) <= 1e-12


def test_moe_matches_literal_sum_oracle():
    rng = np.random.default_rng(8)
    d, E, B = 3, 2, 3
    params = make_params(rng, d=d, E=E, B=B)
    params.gate_w = rng.normal(size=(B, E))
    params.gate_b = rng.normal(size=(B, E))
    params.expert_b1 = rng.normal(size=(E, 2 * d))
    params.expert_b2 = rng.normal(size=(E, d))
    spec = make_spec(rng, V=2)
    out = moe_forward(spec, params)
    band = radial_band_index(8, 8, params.band_edges)
    weights = gate(spec, params)
    z = lift(spec, params).values
    for v in range(2):
        for m in range(8):
            for n in range(8):
                acc = np.zeros(d)
                for e in range(E):
                    h = gelu_ref(z[v, m, n] @ params.expert_w1[e] + params.expert_b1[e])
                    acc = acc + weights[band[m, n], e] * (
                        h @ params.expert_w2[e] + params.expert_b2[e]
                    )
                assert np.allclose(out.values[v, m, n], acc, rtol=1e-9, atol=1e-12)


def test_expert_permutation_equivariance():
    rng = np.random.default_rng(9)
    params = make_params(rng, d=3, E=3, B=4)
    params.gate_w = rng.normal(size=(4, 3))
    params.gate_b = rng.normal(size=(4, 3))
    spec = make_spec(rng)
    base = moe_forward(spec, params).values
    perm = np.array([2, 0, 1])
    permuted = FmoeParams(
        lift_w=params.lift_w,
        lift_b=params.lift_b,
        expert_w1=params.expert_w1[perm],
        expert_b1=params.expert_b1[perm],
        expert_w2=params.expert_w2[perm],
        expert_b2=params.expert_b2[perm],
        gate_w=params.gate_w[:, perm],
        gate_b=params.gate_b[:, perm],
        band_edges=params.band_edges,
    )
    out = moe_forward(spec, permuted).values
    assert np.max(np.abs(out - base)) <= 1e-12


def test_band_locality():
    rng = np.random.default_rng(10)
    params = make_params(rng, d=3, E=2, B=3)
    params.gate_w = rng.normal(size=(3, 2))
    params.gate_b = rng.normal(size=(3, 2))
    spec = make_spec(rng)
    band = radial_band_index(8, 8, params.band_edges)
    target_band = 1
    sel = band == target_band

    w0 = gate(spec, params)
    out0 = moe_forward(spec, params).values

    re = spec.re.copy()
    re[0][sel] += 0.5
    bumped = spec.with_planes(re, spec.im, False)
    w1 = gate(bumped, params)
    out1 = moe_forward(bumped, params).values

    other = ~sel
    assert np.array_equal(w0[np.arange(3) != target_band], w1[np.arange(3) != target_band])
    assert np.array_equal(out0[:, other], out1[:, other])
    assert not np.allclose(out0[:, sel], out1[:, sel])
