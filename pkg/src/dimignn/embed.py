"""Segment embedding: each length-``L_s`` run of one (variable, attribute)
channel becomes one ``d_hidden`` token."""

from __future__ import annotations

import math

import numpy as np

from .optim import ParamStore
from .tensor import Tensor

__all__ = ["segment_count", "pad_front", "init_embed_params", "segment_embed"]


def segment_count(T_in: int, L_s: int) -> int:
    return math.ceil(T_in / L_s)


def pad_front(x: np.ndarray, L_s: int) -> np.ndarray:
    """Repeat the earliest step until the time axis (axis -3) divides by ``L_s``."""
    T_in = x.shape[-3]
    extra = (-T_in) % L_s
    if extra == 0:
        return x
    first = np.take(x, [0], axis=-3)
    return np.concatenate([np.repeat(first, extra, axis=-3), x], axis=-3)


def init_embed_params(store: ParamStore, prefix: str, T_in: int, L_s: int, d_hidden: int) -> None:
    L = segment_count(T_in, L_s)
    store.weight(f"{prefix}.w", (L_s, d_hidden))
    store.zeros(f"{prefix}.b", (d_hidden,))
    store.weight(f"{prefix}.pos", (L, d_hidden))


def segment_embed(x, L_s: int, params: dict[str, Tensor]) -> Tensor:
    """``[..., T_in, N, C]`` -> ``[..., L, N, C, d_hidden]`` with ``L = ceil(T_in / L_s)``.

    One linear map is shared by every channel; ``params["pos"]`` adds a
    learned offset per segment index.
    """
    if L_s < 1:
        raise ValueError("segment length must be >= 1")
    raw = pad_front(np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64), L_s)
    *lead, T, N, C = raw.shape
    L = T // L_s
    # [..., L, L_s, N, C] -> [..., L, N, C, L_s]
    segs = raw.reshape(*lead, L, L_s, N, C)
    segs = np.moveaxis(segs, -3, -1)
    pos = params["pos"]
    if pos.shape[0] != L:
        raise ValueError(f"positional table has {pos.shape[0]} rows, input yields {L} segments")
    h = Tensor(segs) @ params["w"] + params["b"]
    return h + pos.reshape(L, 1, 1, pos.shape[1])
