import dataclasses

import numpy as np
import pytest

from dimignn.model import ConfigError, ModelConfig, block_segment_counts, build_params, model_forward, mse_loss, mse_mae
from dimignn.tensor import no_grad
from conftest import grad_error_total


def _small(**kw):
    base = dict(T_in=8, tau=2, L_s=2, B=2, d_hidden=4, heads=2, k=2, d_fuse=3, seed=0)
    base.update(kw)
    return ModelConfig(**base)


def test_default_segment_counts():
    assert block_segment_counts(ModelConfig()) == [8, 4, 2]


def test_default_pipeline_shapes():
    cfg = ModelConfig(d_hidden=8)
    store = build_params(cfg, 5, 3)
    x = np.random.default_rng(0).standard_normal((2, 48, 5, 3))
    with no_grad():
        out, det = model_forward(x, cfg, store, return_details=True)
    assert out.shape == (2, 12, 5, 1)
    assert det["segment_counts"] == [8, 4, 2]
    assert [p.shape for p in det["block_preds"]] == [(2, 12, 5, 1)] * 3
    assert det["alpha"].shape == (2, 3)
    assert [n.shape for n in det["neighbors"]] == [(2, 5, 3)] * 3


def test_unbatched_window():
    cfg = _small()
    store = build_params(cfg, 4, 2)
    x = np.random.default_rng(1).standard_normal((3, 8, 4, 2))
    with no_grad():
        batched = model_forward(x, cfg, store).data
        single = model_forward(x[1], cfg, store).data
    assert single.shape == (2, 4, 1)
    np.testing.assert_allclose(single, batched[1], rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("norm_kind,fusion_kind", [("dyt", "dmfm"), ("layernorm", "dmfm"), ("dyt", "sum")])
def test_end_to_end_gradients(norm_kind, fusion_kind):
    cfg = _small(norm_kind=norm_kind, fusion_kind=fusion_kind)
    store = build_params(cfg, 4, 2)
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 8, 4, 2))
    target = rng.standard_normal((2, 2, 4, 1))
    with no_grad():
        _, det = model_forward(x, cfg, store, return_details=True)
    frozen = det["neighbors"]
    err = grad_error_total(lambda: mse_loss(model_forward(x, cfg, store, neighbors=frozen), target), dict(store.items()))
    assert err < 1e-6


def test_ablations_share_initialisation():
    full = build_params(_small(), 4, 2)
    ln = build_params(_small(fusion_kind="sum"), 4, 2)
    shared = [k for k in full.entries if k in ln.entries]
    assert shared and all(np.array_equal(full[k].data, ln[k].data) for k in shared)
    assert not any(k.startswith("dmfm.") for k in ln.entries)


def test_wo_dnsm_uses_similarity_only():
    cfg = _small(lam=0.3, dnsm_enabled=False)
    assert cfg.effective_lam == 1.0
    assert cfg.dnsm().lam == 1.0
    assert _small(lam=0.3).dnsm().lam == 0.3


def test_sum_fusion_is_sum_of_blocks():
    cfg = _small(fusion_kind="sum")
    store = build_params(cfg, 4, 2)
    x = np.random.default_rng(4).standard_normal((2, 8, 4, 2))
    with no_grad():
        out, det = model_forward(x, cfg, store, return_details=True)
    np.testing.assert_allclose(out.data, sum(p.data for p in det["block_preds"]), rtol=1e-12)
    assert det["alpha"] is None


def test_frozen_neighbours_reproduce_forward():
    cfg = _small()
    store = build_params(cfg, 4, 2)
    x = np.random.default_rng(5).standard_normal((2, 8, 4, 2))
    with no_grad():
        a, det = model_forward(x, cfg, store, return_details=True)
        b = model_forward(x, cfg, store, neighbors=det["neighbors"])
    np.testing.assert_array_equal(a.data, b.data)


def test_wrong_window_length():
    cfg = _small()
    with pytest.raises(ValueError, match="T_in"):
        model_forward(np.zeros((1, 7, 4, 2)), cfg, build_params(cfg, 4, 2))


@pytest.mark.parametrize(
    "pred,target,expected",
    [
        ([0.0, 0.0], [0.0, 0.0], (0.0, 0.0)),
        ([1.0, 3.0], [3.0, 1.0], (4.0, 2.0)),
        ([1.0, -3.0], [0.0, 0.0], (5.0, 2.0)),
    ],
)
def test_mse_mae_examples(pred, target, expected):
    assert mse_mae(np.array(pred), np.array(target)) == expected


def test_mse_mae_shape_mismatch():
    with pytest.raises(ValueError):
        mse_mae(np.zeros(3), np.zeros(4))


@pytest.mark.parametrize(
    "kw,field",
    [
        (dict(heads=3), "heads"),
        (dict(B=5), "B"),
        (dict(lam=1.5), "lam"),
        (dict(norm_kind="batchnorm"), "norm_kind"),
        (dict(fusion_kind="max"), "fusion_kind"),
        (dict(tau=0), "tau"),
        (dict(lr=-1.0), "lr"),
    ],
)
def test_config_errors_name_field(kw, field):
    with pytest.raises(ConfigError) as info:
        dataclasses.replace(ModelConfig(), **kw).validate()
    assert info.value.field == field


def test_k_checked_against_variables():
    with pytest.raises(ConfigError) as info:
        ModelConfig(k=4).validate(N=4)
    assert info.value.field == "k"


def test_config_dict_round_trip():
    cfg = _small(lam=0.25, norm_kind="layernorm")
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
