"""Inter-variable layer: diversity-aware neighbour selection followed by
graph attention over each variable's selected neighbourhood."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optim import ParamStore
from .tensor import Tensor, elu, leaky_relu, reshape, softmax, transpose

__all__ = [
    "DnsmConfig",
    "temporal_profile",
    "cosine",
    "cosine_matrix",
    "dnsm_select",
    "termm_gat",
    "tip_forward",
    "init_gat_params",
]

# finite stand-in for -inf so masked logits keep the forward pass finite
_MASKED = -1e30


@dataclass(frozen=True)
class DnsmConfig:
    lam: float = 0.7
    k: int = 3

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


def temporal_profile(z_attr) -> np.ndarray:
    """Mean over the segment and hidden axes: ``[..., L, N, C, d] -> [..., N, C]``."""
    data = z_attr.data if isinstance(z_attr, Tensor) else np.asarray(z_attr, dtype=np.float64)
    return data.mean(axis=(-4, -1))


def cosine(u, v) -> float:
    """Cosine similarity; 0 when either vector has zero norm."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(u @ v / (nu * nv))


def cosine_matrix(profile: np.ndarray) -> np.ndarray:
    """Pairwise cosine over the variable axis: ``[..., N, C] -> [..., N, N]``."""
    norms = np.linalg.norm(profile, axis=-1, keepdims=True)
    unit = np.divide(profile, norms, out=np.zeros_like(profile), where=norms > 0)
    return unit @ np.swapaxes(unit, -1, -2)


def dnsm_select(profile, cfg: DnsmConfig) -> np.ndarray:
    """Greedy neighbour choice balancing similarity and mutual diversity.

    The first neighbour of variable ``i`` is its most cosine-similar peer.
    Each later pick maximises ``lam * sim(i, j) + (1 - lam) * div(j)``, where
    ``div(j)`` is one minus the mean cosine between ``j`` and the neighbours
    already chosen. Ties go to the lowest index.

    ``profile`` is ``[N, C]`` or batched ``[B, N, C]``; the result is an
    integer array ``[N, k]`` (or ``[B, N, k]``) in selection order.
    """
    profile = np.asarray(profile, dtype=np.float64)
    single = profile.ndim == 2
    if single:
        profile = profile[None]
    B, N, _ = profile.shape
    k = cfg.k
    if not 1 <= k <= N - 1:
        raise ValueError(f"k={k} out of range for N={N} variables (need 1 <= k <= N-1)")

    cos = cosine_matrix(profile)
    taken = np.zeros((B, N, N), dtype=bool)
    ar = np.arange(N)
    taken[:, ar, ar] = True
    bi = np.arange(B)[:, None]
    out = np.empty((B, N, k), dtype=np.int64)

    pick = np.where(taken, -np.inf, cos).argmax(axis=-1)
    out[:, :, 0] = pick
    taken[bi, ar, pick] = True
    # running sum over chosen neighbours n of cos(j, n), for every candidate j
    div_sum = cos[bi, pick, :].copy()
    for m in range(1, k):
        score = cfg.lam * cos + (1.0 - cfg.lam) * (1.0 - div_sum / m)
        pick = np.where(taken, -np.inf, score).argmax(axis=-1)
        out[:, :, m] = pick
        taken[bi, ar, pick] = True
        div_sum += cos[bi, pick, :]
    return out[0] if single else out


def init_gat_params(store: ParamStore, prefix: str, d: int) -> None:
    store.weight(f"{prefix}.w", (d, d))
    store.weight(f"{prefix}.a_src", (d, 1))
    store.weight(f"{prefix}.a_dst", (d, 1))


def _neighbour_mask(nbrs: np.ndarray, N: int) -> np.ndarray:
    """Additive logit mask ``[B, N, N]``: 0 on self and neighbours, very negative elsewhere."""
    B = nbrs.shape[0]
    mask = np.full((B, N, N), _MASKED)
    ar = np.arange(N)
    mask[:, ar, ar] = 0.0
    if nbrs.shape[-1]:
        mask[np.arange(B)[:, None, None], ar[None, :, None], nbrs] = 0.0
    return mask


def termm_gat(
    z_attr: Tensor,
    nbrs,
    params: dict[str, Tensor],
    negative_slope: float = 0.2,
    return_attention: bool = False,
):
    """Single-head graph attention over variables, per (segment, attribute).

    Node ``i`` attends to itself and to ``nbrs[i]``; logits are
    ``LeakyReLU(a_src . W h_i + a_dst . W h_j)`` and the aggregated
    ``sum_j att_ij W h_j`` passes through ELU. Shape is preserved.
    """
    nbrs = np.asarray(nbrs, dtype=np.int64)
    single = z_attr.ndim == 4
    z = reshape(z_attr, (1, *z_attr.shape)) if single else z_attr
    if z.ndim != 5:
        raise ValueError(f"expected [B, L, N, C, d] or [L, N, C, d], got {z_attr.shape}")
    B, L, N, C, d = z.shape
    if nbrs.ndim == 2:
        nbrs = np.broadcast_to(nbrs, (B, *nbrs.shape))
    if nbrs.shape[:2] != (B, N):
        raise ValueError(f"neighbour matrix shape {nbrs.shape} does not match B={B}, N={N}")

    h = transpose(z, (0, 1, 3, 2, 4)) @ params["w"]  # [B, L, C, N, d]
    src = h @ params["a_src"]  # [B, L, C, N, 1]
    dst = transpose(h @ params["a_dst"], (0, 1, 2, 4, 3))  # [B, L, C, 1, N]
    logits = leaky_relu(src + dst, negative_slope) + _neighbour_mask(nbrs, N)[:, None, None]
    att = softmax(logits, axis=-1)
    out = transpose(elu(att @ h), (0, 1, 3, 2, 4))
    if single:
        out = reshape(out, out.shape[1:])
        att = reshape(att, att.shape[1:])
    return (out, att) if return_attention else out


def tip_forward(
    z_attr: Tensor,
    cfg: DnsmConfig,
    params: dict[str, Tensor],
    neighbors=None,
    return_neighbors: bool = False,
):
    """Select neighbours from the current representation, then aggregate.

    Selection is a routing decision computed on detached values; gradients
    reach the representation only through the attention aggregation.
    Passing ``neighbors`` freezes the routing.
    """
    if neighbors is None:
        neighbors = dnsm_select(temporal_profile(z_attr), cfg)
    y = termm_gat(z_attr, neighbors, params)
    return (y, neighbors) if return_neighbors else y
