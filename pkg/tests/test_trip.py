import math

import numpy as np
import pytest

from dimignn.optim import ParamStore
from dimignn.tensor import Tensor, backward
from dimignn.trip import (
    NORM_SITES,
    dyt,
    init_dyt_params,
    init_merge_params,
    init_msa_params,
    init_trip_params,
    layernorm,
    merge_segments,
    msa_axis,
    trip_forward,
)
from conftest import grad_errors


def _store(fn, *args, seed=0, **kw):
    store = ParamStore(seed=seed)
    fn(store, "p", *args, **kw)
    return store.scope("p")


def _perturb(params, rng, scale=0.3):
    for p in params.values():
        p.data += scale * rng.standard_normal(p.shape)


# DyT


def test_dyt_zero_gives_beta():
    p = _store(init_dyt_params, 3)
    p["beta"].data[:] = [1.0, 2.0, 3.0]
    p["gamma"].data[:] = [5.0, -1.0, 0.3]
    np.testing.assert_array_equal(dyt(Tensor(np.zeros((2, 3))), p).data, [[1, 2, 3]] * 2)


def test_dyt_reference_value():
    p = _store(init_dyt_params, 1)
    p["alpha"].data[...] = 0.5
    p["gamma"].data[:] = 2.0
    p["beta"].data[:] = 1.0
    assert dyt(Tensor([2.0]), p).item() == pytest.approx(2.5231883119115296, abs=1e-7)
    assert dyt(Tensor([2.0]), p).item() == pytest.approx(2 * math.tanh(1.0) + 1, abs=1e-15)


def test_dyt_saturates():
    p = _store(init_dyt_params, 2)
    p["gamma"].data[:] = [2.0, -1.0]
    p["beta"].data[:] = [0.5, 0.5]
    np.testing.assert_allclose(dyt(Tensor([1e3, 1e3]), p).data, [2.5, -0.5])


def test_dyt_gradient():
    rng = np.random.default_rng(0)
    p = _store(init_dyt_params, 4)
    _perturb(p, rng)
    x = Tensor(rng.standard_normal((3, 4)))
    w = rng.standard_normal((3, 4))
    errs = grad_errors(lambda: (dyt(x, p) * w).sum(), p)
    assert max(errs.values()) < 1e-6, errs


# LayerNorm


def test_layernorm_hand_case():
    out = layernorm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
    np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-8)


def test_layernorm_constant_vector():
    out = layernorm(Tensor(np.full(4, 7.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    np.testing.assert_array_equal(out.data, 0.0)


def test_layernorm_moments():
    rng = np.random.default_rng(1)
    out = layernorm(Tensor(rng.normal(3, 5, size=(6, 8))), Tensor(np.ones(8)), Tensor(np.zeros(8))).data
    np.testing.assert_allclose(out.mean(-1), 0.0, atol=1e-6)
    np.testing.assert_allclose(out.var(-1), 1.0, atol=1e-6)


def test_layernorm_gradient():
    rng = np.random.default_rng(2)
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    gain = Tensor(rng.standard_normal(4), requires_grad=True)
    bias = Tensor(rng.standard_normal(4), requires_grad=True)
    w = rng.standard_normal((3, 4))
    errs = grad_errors(lambda: (layernorm(x, gain, bias) * w).sum(), {"x": x, "gain": gain, "bias": bias})
    assert max(errs.values()) < 1e-6, errs


# merge


def test_merge_counts():
    p = _store(init_merge_params, 3)
    assert merge_segments(Tensor(np.zeros((4, 2, 2, 3))), p).shape == (2, 2, 2, 3)
    assert merge_segments(Tensor(np.zeros((5, 2, 2, 3))), p).shape == (3, 2, 2, 3)
    assert merge_segments(Tensor(np.zeros((7, 5, 4, 2, 2, 3))), p).shape == (7, 5, 2, 2, 2, 3)


def test_merge_identity_projection_picks_even_segments():
    d = 3
    p = _store(init_merge_params, d)
    p["w"].data[:] = np.vstack([np.eye(d), np.zeros((d, d))])
    z = np.random.default_rng(0).standard_normal((5, 2, 2, d))
    out = merge_segments(Tensor(z), p).data
    for j in range(3):
        np.testing.assert_array_equal(out[j], z[2 * j])
    p["w"].data[:] = np.vstack([np.zeros((d, d)), np.eye(d)])
    out = merge_segments(Tensor(z), p).data
    np.testing.assert_array_equal(out[2], z[4])  # odd L duplicates the last segment


def test_merge_gradient():
    rng = np.random.default_rng(3)
    p = _store(init_merge_params, 4)
    z = Tensor(rng.standard_normal((3, 2, 2, 4)), requires_grad=True)
    w = rng.standard_normal((2, 2, 2, 4))
    errs = grad_errors(lambda: (merge_segments(z, p) * w).sum(), {**p, "z": z})
    assert max(errs.values()) < 1e-6, errs


# attention


def test_single_position_attention_is_value_projection():
    d = 4
    p = _store(init_msa_params, d)
    rng = np.random.default_rng(4)
    _perturb(p, rng)
    z = Tensor(rng.standard_normal((1, 3, 2, d)))
    out, weights = msa_axis(z, "time", p, heads=2, return_weights=True)
    np.testing.assert_array_equal(weights.data, 1.0)
    expected = (z.data @ p["wv"].data + p["bv"].data) @ p["wo"].data + p["bo"].data
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


@pytest.mark.parametrize("axis", ["time", "attribute"])
def test_attention_rows_sum_to_one(axis):
    rng = np.random.default_rng(5)
    p = _store(init_msa_params, 4)
    _perturb(p, rng)
    z = Tensor(rng.standard_normal((2, 5, 3, 4, 4)))
    out, weights = msa_axis(z, axis, p, heads=2, return_weights=True)
    assert out.shape == z.shape
    np.testing.assert_allclose(weights.data.sum(-1), 1.0, atol=1e-6)
    P = 5 if axis == "time" else 4
    assert weights.shape[-2:] == (P, P)


def test_uniform_keys_give_uniform_weights():
    d = 4
    p = _store(init_msa_params, d)
    p["wk"].data[:] = 0.0
    z = Tensor(np.random.default_rng(6).standard_normal((6, 2, 3, d)))
    _, weights = msa_axis(z, "time", p, heads=2, return_weights=True)
    np.testing.assert_allclose(weights.data, 1 / 6, atol=1e-15)


def test_attention_mixes_only_along_axis():
    rng = np.random.default_rng(7)
    p = _store(init_msa_params, 4)
    z = rng.standard_normal((4, 3, 2, 4))
    base = msa_axis(Tensor(z), "time", p, heads=2).data
    z2 = z.copy()
    z2[:, 1] += 1.0  # change one variable
    moved = msa_axis(Tensor(z2), "time", p, heads=2).data
    np.testing.assert_array_equal(base[:, 0], moved[:, 0])
    np.testing.assert_array_equal(base[:, 2], moved[:, 2])


def test_heads_must_divide_hidden():
    p = _store(init_msa_params, 4)
    with pytest.raises(ValueError):
        msa_axis(Tensor(np.zeros((2, 2, 2, 4))), "time", p, heads=3)
    with pytest.raises(ValueError):
        _store(init_trip_params, 5, heads=2)


@pytest.mark.parametrize("axis", ["time", "attribute"])
def test_attention_gradient(axis):
    rng = np.random.default_rng(8)
    p = _store(init_msa_params, 4)
    _perturb(p, rng)
    z = Tensor(rng.standard_normal((2, 3, 2, 4)), requires_grad=True)
    w = rng.standard_normal((2, 3, 2, 4))
    errs = grad_errors(lambda: (msa_axis(z, axis, p, heads=2) * w).sum(), {**p, "z": z})
    assert max(errs.values()) < 1e-6, errs


# whole layer


@pytest.mark.parametrize("norm_kind", ["dyt", "layernorm"])
def test_trip_shapes(norm_kind):
    z = Tensor(np.random.default_rng(9).standard_normal((5, 3, 2, 4)))
    first = _store(init_trip_params, 4, norm_kind=norm_kind)
    deeper = _store(init_trip_params, 4, norm_kind=norm_kind, merge=True)
    a = trip_forward(z, True, first, norm_kind=norm_kind)
    b = trip_forward(z, False, deeper, norm_kind=norm_kind)
    assert a.shape == (5, 3, 2, 4)
    assert b.shape == (3, 3, 2, 4)
    assert np.isfinite(a.data).all() and np.isfinite(b.data).all()


@pytest.mark.parametrize("first", [True, False])
def test_residual_structure(first):
    rng = np.random.default_rng(10)
    p = _store(init_trip_params, 4, merge=not first)
    _perturb(p, rng)
    for name in ("msa_time", "msa_attr"):
        p[f"{name}.wo"].data[:] = 0.0
        p[f"{name}.bo"].data[:] = 0.0
    for name in ("mlp_time", "mlp_attr"):
        p[f"{name}.w2"].data[:] = 0.0
        p[f"{name}.b2"].data[:] = 0.0
    z = Tensor(rng.standard_normal((4, 3, 2, 4)))
    got = trip_forward(z, first, p).data
    x = z if first else merge_segments(z, {"w": p["merge.w"], "b": p["merge.b"]})
    for site in NORM_SITES:
        x = dyt(x, {k: p[f"{site}.{k}"] for k in ("alpha", "gamma", "beta")})
    np.testing.assert_array_equal(got, x.data)


@pytest.mark.parametrize("first,norm_kind", [(True, "dyt"), (False, "dyt"), (False, "layernorm")])
def test_trip_gradient(first, norm_kind):
    rng = np.random.default_rng(11)
    p = _store(init_trip_params, 4, merge=not first, norm_kind=norm_kind)
    _perturb(p, rng, 0.2)
    z = Tensor(rng.standard_normal((2, 3, 2, 4)), requires_grad=True)
    out_shape = (2 if first else 1, 3, 2, 4)
    w = rng.standard_normal(out_shape)
    errs = grad_errors(lambda: (trip_forward(z, first, p, norm_kind=norm_kind) * w).sum(), {**p, "z": z})
    assert max(errs.values()) < 1e-6, {k: v for k, v in errs.items() if v >= 1e-6}


def test_every_dyt_site_gets_gradient():
    rng = np.random.default_rng(12)
    p = _store(init_trip_params, 4, merge=True)
    z = Tensor(rng.standard_normal((4, 3, 2, 4)))
    w = rng.standard_normal((2, 3, 2, 4))
    backward((trip_forward(z, False, p) * w).sum())
    for site in NORM_SITES:
        for k in ("alpha", "gamma", "beta"):
            g = p[f"{site}.{k}"].grad
            assert g is not None and np.abs(g).max() > 0, (site, k)
