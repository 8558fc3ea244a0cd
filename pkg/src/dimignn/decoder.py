"""Per-block forecast heads and the fusion of per-scale forecasts."""

from __future__ import annotations

from typing import Sequence

from .optim import ParamStore
from .tensor import Tensor, concat, relu, reshape, softmax, sum_axis, transpose

__all__ = [
    "decode_block",
    "dmfm_fuse",
    "fuse_ablation_sum",
    "fuse_mean",
    "init_decoder_params",
    "init_dmfm_params",
]


def init_decoder_params(store: ParamStore, prefix: str, L_b: int, d: int, tau: int) -> None:
    store.weight(f"{prefix}.w", (L_b * d, tau))
    store.zeros(f"{prefix}.b", (tau,))


def init_dmfm_params(store: ParamStore, prefix: str, tau: int, N: int, B: int, d_fuse: int = 16) -> None:
    store.weight(f"{prefix}.w1", (d_fuse, tau * N))
    store.zeros(f"{prefix}.b1", (d_fuse,))
    store.weight(f"{prefix}.w2", (B, d_fuse))
    store.zeros(f"{prefix}.b2", (B,))


def decode_block(y_b: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Linear head on the target-attribute slice of one block's output.

    ``[..., L_b, N, C, d] -> [..., tau, N, 1]``: for each variable the
    ``[L_b, d]`` slice at attribute 0 is flattened and mapped to ``tau`` values.
    """
    *lead, L_b, N, _, d = y_b.shape
    main = y_b[..., 0, :]  # [..., L_b, N, d]
    nl = len(lead)
    per_var = transpose(main, list(range(nl)) + [nl + 1, nl, nl + 2])  # [..., N, L_b, d]
    flat = reshape(per_var, (*lead, N, L_b * d))
    out = flat @ params["w"] + params["b"]  # [..., N, tau]
    tau = out.shape[-1]
    out = transpose(out, list(range(nl)) + [nl + 1, nl])
    return reshape(out, (*lead, tau, N, 1))


def _stack_blocks(preds: Sequence[Tensor]) -> Tensor:
    """``B x [..., tau, N, 1] -> [..., B, tau, N, 1]``."""
    shape = preds[0].shape
    for p in preds[1:]:
        if p.shape != shape:
            raise ValueError(f"per-block forecasts disagree in shape: {[q.shape for q in preds]}")
    nl = len(shape) - 3
    return concat([reshape(p, (*shape[:nl], 1, *shape[nl:])) for p in preds], axis=nl)


def dmfm_fuse(preds: Sequence[Tensor], params: dict[str, Tensor], return_weights: bool = False):
    """Input-dependent convex combination of the per-block forecasts.

    The block-average forecast is flattened over (tau, N), passed through
    ReLU(W1 x + b1) and softmax(W2 . + b2) to give one weight per block.
    """
    if not preds:
        raise ValueError("need at least one block forecast")
    stacked = _stack_blocks(preds)  # [..., B, tau, N, 1]
    nl = stacked.ndim - 4
    lead = stacked.shape[:nl]
    B, tau, N = stacked.shape[nl : nl + 3]
    avg = sum_axis(stacked, nl) * (1.0 / B)
    flat = reshape(avg, (*lead, 1, tau * N))
    hidden = relu(flat @ transpose(params["w1"]) + params["b1"])
    alpha = softmax(hidden @ transpose(params["w2"]) + params["b2"], axis=-1)  # [..., 1, B]
    weights = reshape(alpha, (*lead, B, 1, 1, 1))
    fused = sum_axis(stacked * weights, nl)
    if return_weights:
        return fused, reshape(alpha, (*lead, B))
    return fused


def fuse_ablation_sum(preds: Sequence[Tensor]) -> Tensor:
    """Plain elementwise sum over blocks."""
    if not preds:
        raise ValueError("need at least one block forecast")
    return sum_axis(_stack_blocks(preds), preds[0].ndim - 3)


def fuse_mean(preds: Sequence[Tensor]) -> Tensor:
    return fuse_ablation_sum(preds) * (1.0 / len(preds))
