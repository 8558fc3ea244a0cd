"""Temporal/attribute dependency layer.

Representations are ``[..., L, N, C, d]`` (segment, variable, attribute,
hidden); any leading axes are batch axes. One block runs

    Zt_hat = norm1(Z + MSA_time(Z))          # Z <- merge(Z) in deeper blocks
    Zt     = norm2(Zt_hat + MLP_time(Zt_hat))
    Za_hat = norm3(Zt + MSA_attr(Zt))
    Za     = norm4(Za_hat + MLP_attr(Za_hat))

where every ``norm`` is DyT, or LayerNorm in the ablation mode.
"""

from __future__ import annotations

import math

import numpy as np

from .optim import ParamStore, scope
from .tensor import Tensor, concat, mean_axis, relu, reshape, softmax, tanh, transpose

__all__ = [
    "AXES",
    "NORM_SITES",
    "dyt",
    "layernorm",
    "merge_segments",
    "msa_axis",
    "mlp",
    "trip_forward",
    "init_dyt_params",
    "init_layernorm_params",
    "init_msa_params",
    "init_mlp_params",
    "init_merge_params",
    "init_trip_params",
]

# position of each attention axis counted from the end of [..., L, N, C, d]
AXES = {"time": -4, "attribute": -2}
NORM_SITES = ("norm1", "norm2", "norm3", "norm4")
LN_EPS = 1e-9


def dyt(x: Tensor, p: dict[str, Tensor]) -> Tensor:
    """gamma * tanh(alpha * x) + beta over the last axis."""
    return p["gamma"] * tanh(p["alpha"] * x) + p["beta"]


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    centred = x - mean_axis(x, -1, keepdims=True)
    var = mean_axis(centred * centred, -1, keepdims=True)
    return centred * (var + eps) ** -0.5 * gain + bias


def _norm(x: Tensor, p: dict[str, Tensor], kind: str) -> Tensor:
    if kind == "dyt":
        return dyt(x, p)
    if kind == "layernorm":
        return layernorm(x, p["gain"], p["bias"])
    raise ValueError(f"unknown norm kind {kind!r}")


def merge_segments(z: Tensor, p: dict[str, Tensor]) -> Tensor:
    """Fuse segment pairs (2j, 2j+1): concatenate on hidden, project back to d.

    An odd segment count duplicates the final segment first.
    """
    L = z.shape[-4]
    if L % 2:
        z = concat([z, z[..., L - 1 : L, :, :, :]], axis=-4)
        L += 1
    *lead, _, N, C, d = z.shape
    pairs = reshape(z, (*lead, L // 2, 2, N, C, d))
    nd = len(pairs.shape)
    # [..., L/2, 2, N, C, d] -> [..., L/2, N, C, 2, d]
    order = list(range(nd - 5)) + [nd - 5, nd - 3, nd - 2, nd - 4, nd - 1]
    pairs = transpose(pairs, order)
    flat = reshape(pairs, (*lead, L // 2, N, C, 2 * d))
    return flat @ p["w"] + p["b"]


def msa_axis(
    z: Tensor,
    axis: str,
    p: dict[str, Tensor],
    heads: int,
    return_weights: bool = False,
):
    """Multi-head scaled dot-product self-attention along ``axis``.

    Positions run along the chosen axis ("time" or "attribute"); all other
    axes are batch. Returns the output and, on request, the attention
    weights ``[..., heads, P, P]``.
    """
    d = z.shape[-1]
    if d % heads:
        raise ValueError(f"d_hidden={d} is not divisible by heads={heads}")
    nd = z.ndim
    ax = AXES[axis] % nd
    perm = [i for i in range(nd - 1) if i != ax] + [ax, nd - 1]
    inv = list(np.argsort(perm))
    x = transpose(z, perm) if perm != list(range(nd)) else z
    *lead, P, _ = x.shape
    dh = d // heads

    def split(t: Tensor) -> Tensor:
        t = reshape(t, (*lead, P, heads, dh))
        return transpose(t, list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2])

    q = split(x @ p["wq"] + p["bq"])
    k = split(x @ p["wk"] + p["bk"])
    v = split(x @ p["wv"] + p["bv"])
    kt = transpose(k, list(range(len(lead) + 1)) + [len(lead) + 2, len(lead) + 1])
    weights = softmax((q @ kt) * (1.0 / math.sqrt(dh)), axis=-1)
    o = weights @ v
    o = transpose(o, list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2])
    o = reshape(o, (*lead, P, d)) @ p["wo"] + p["bo"]
    out = transpose(o, inv) if perm != list(range(nd)) else o
    return (out, weights) if return_weights else out


def mlp(x: Tensor, p: dict[str, Tensor]) -> Tensor:
    return relu(x @ p["w1"] + p["b1"]) @ p["w2"] + p["b2"]


def trip_forward(
    z: Tensor,
    is_first_block: bool,
    params: dict[str, Tensor],
    heads: int = 2,
    norm_kind: str = "dyt",
) -> Tensor:
    if not is_first_block:
        # residual taken on the merged input so that shapes agree
        z = merge_segments(z, scope(params, "merge"))
    zt_hat = _norm(z + msa_axis(z, "time", scope(params, "msa_time"), heads), scope(params, "norm1"), norm_kind)
    zt = _norm(zt_hat + mlp(zt_hat, scope(params, "mlp_time")), scope(params, "norm2"), norm_kind)
    za_hat = _norm(zt + msa_axis(zt, "attribute", scope(params, "msa_attr"), heads), scope(params, "norm3"), norm_kind)
    return _norm(za_hat + mlp(za_hat, scope(params, "mlp_attr")), scope(params, "norm4"), norm_kind)


def init_dyt_params(store: ParamStore, prefix: str, d: int, alpha: float = 0.5) -> None:
    store.full(f"{prefix}.alpha", (), alpha)
    store.full(f"{prefix}.gamma", (d,), 1.0)
    store.zeros(f"{prefix}.beta", (d,))


def init_layernorm_params(store: ParamStore, prefix: str, d: int) -> None:
    store.full(f"{prefix}.gain", (d,), 1.0)
    store.zeros(f"{prefix}.bias", (d,))


def init_msa_params(store: ParamStore, prefix: str, d: int) -> None:
    for name in ("q", "k", "v", "o"):
        store.weight(f"{prefix}.w{name}", (d, d))
        store.zeros(f"{prefix}.b{name}", (d,))


def init_mlp_params(store: ParamStore, prefix: str, d: int, hidden: int) -> None:
    store.weight(f"{prefix}.w1", (d, hidden))
    store.zeros(f"{prefix}.b1", (hidden,))
    store.weight(f"{prefix}.w2", (hidden, d))
    store.zeros(f"{prefix}.b2", (d,))


def init_merge_params(store: ParamStore, prefix: str, d: int) -> None:
    store.weight(f"{prefix}.w", (2 * d, d))
    store.zeros(f"{prefix}.b", (d,))


def init_trip_params(
    store: ParamStore,
    prefix: str,
    d: int,
    heads: int = 2,
    norm_kind: str = "dyt",
    merge: bool = False,
    mlp_ratio: int = 2,
) -> None:
    if d % heads:
        raise ValueError(f"d_hidden={d} is not divisible by heads={heads}")
    if merge:
        init_merge_params(store, f"{prefix}.merge", d)
    init_msa_params(store, f"{prefix}.msa_time", d)
    init_msa_params(store, f"{prefix}.msa_attr", d)
    init_mlp_params(store, f"{prefix}.mlp_time", d, mlp_ratio * d)
    init_mlp_params(store, f"{prefix}.mlp_attr", d, mlp_ratio * d)
    for site in NORM_SITES:
        if norm_kind == "dyt":
            init_dyt_params(store, f"{prefix}.{site}", d)
        elif norm_kind == "layernorm":
            init_layernorm_params(store, f"{prefix}.{site}", d)
        else:
            raise ValueError(f"unknown norm kind {norm_kind!r}")
