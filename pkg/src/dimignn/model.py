"""Full forward pass: segment embedding, B stacked (TRIP, TIP) blocks, one
forecast head per block and fusion of the per-scale forecasts."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .decoder import dmfm_fuse, decode_block, fuse_ablation_sum, fuse_mean, init_decoder_params, init_dmfm_params
from .embed import init_embed_params, segment_count, segment_embed
from .optim import ParamStore, scope
from .tensor import Tensor, mean_axis
from .tip import DnsmConfig, init_gat_params, tip_forward
from .trip import init_trip_params, trip_forward

__all__ = [
    "ModelConfig",
    "ConfigError",
    "block_segment_counts",
    "build_params",
    "model_forward",
    "mse_loss",
    "mse_mae",
]

NORM_KINDS = ("dyt", "layernorm")
FUSION_KINDS = ("dmfm", "sum", "mean")


class ConfigError(ValueError):
    """A configuration field holds an invalid value; ``field`` names it."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass
class ModelConfig:
    T_in: int = 48
    tau: int = 12
    L_s: int = 6
    B: int = 3
    d_hidden: int = 32
    heads: int = 2
    k: int = 3
    lam: float = 0.7
    norm_kind: str = "dyt"
    fusion_kind: str = "dmfm"
    dnsm_enabled: bool = True
    d_fuse: int = 16
    lr: float = 1e-3
    epochs: int = 50
    batch_size: int = 32
    patience: int = 20
    seed: int = 0

    def validate(self, N: int | None = None) -> ModelConfig:
        for name in ("T_in", "tau", "L_s", "B", "d_hidden", "heads", "k", "d_fuse", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(name, f"must be >= 1, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ConfigError("epochs", "must be >= 0")
        if self.patience < 1:
            raise ConfigError("patience", "must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr", "must be >= 0")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lam", f"must lie in [0, 1], got {self.lam}")
        if self.norm_kind not in NORM_KINDS:
            raise ConfigError("norm_kind", f"must be one of {NORM_KINDS}, got {self.norm_kind!r}")
        if self.fusion_kind not in FUSION_KINDS:
            raise ConfigError("fusion_kind", f"must be one of {FUSION_KINDS}, got {self.fusion_kind!r}")
        if self.d_hidden % self.heads:
            raise ConfigError("heads", f"d_hidden={self.d_hidden} is not divisible by heads={self.heads}")
        L = segment_count(self.T_in, self.L_s)
        if L < 2 ** (self.B - 1):
            raise ConfigError(
                "B", f"{self.B} blocks need at least {2 ** (self.B - 1)} segments, T_in/L_s gives {L}"
            )
        if N is not None and not 1 <= self.k <= N - 1:
            raise ConfigError("k", f"must satisfy 1 <= k <= N-1 = {N - 1}, got {self.k}")
        return self

    @property
    def effective_lam(self) -> float:
        return self.lam if self.dnsm_enabled else 1.0

    def dnsm(self) -> DnsmConfig:
        return DnsmConfig(lam=self.effective_lam, k=self.k)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in doc.items() if k in known})


def block_segment_counts(cfg: ModelConfig) -> list[int]:
    counts = [segment_count(cfg.T_in, cfg.L_s)]
    for _ in range(cfg.B - 1):
        counts.append((counts[-1] + 1) // 2)
    return counts


def build_params(cfg: ModelConfig, N: int, C: int) -> ParamStore:
    """Initialise every parameter the configuration uses."""
    cfg.validate(N)
    store = ParamStore(seed=cfg.seed)
    d = cfg.d_hidden
    init_embed_params(store, "embed", cfg.T_in, cfg.L_s, d)
    for b, L_b in enumerate(block_segment_counts(cfg)):
        init_trip_params(store, f"block{b}.trip", d, cfg.heads, cfg.norm_kind, merge=b > 0)
        init_gat_params(store, f"block{b}.gat", d)
        init_decoder_params(store, f"block{b}.dec", L_b, d, cfg.tau)
    if cfg.fusion_kind == "dmfm":
        init_dmfm_params(store, "dmfm", cfg.tau, N, cfg.B, cfg.d_fuse)
    return store


def model_forward(x, cfg: ModelConfig, params, neighbors=None, return_details: bool = False):
    """Forecast ``[..., tau, N, 1]`` from input windows ``[..., T_in, N, C]``.

    ``neighbors`` optionally freezes the routing: a list with one neighbour
    matrix per block. With ``return_details`` a dict of intermediate results
    (per-block forecasts, fusion weights, neighbours, segment counts) is
    returned as well.
    """
    entries = params.entries if isinstance(params, ParamStore) else params
    raw = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if raw.shape[-3] != cfg.T_in:
        raise ValueError(f"input has {raw.shape[-3]} steps, model expects T_in={cfg.T_in}")
    dnsm = cfg.dnsm()
    y = segment_embed(raw, cfg.L_s, scope(entries, "embed"))
    preds, nbr_used, counts = [], [], []
    for b in range(cfg.B):
        z = trip_forward(y, b == 0, scope(entries, f"block{b}.trip"), cfg.heads, cfg.norm_kind)
        frozen = None if neighbors is None else neighbors[b]
        y, nb = tip_forward(z, dnsm, scope(entries, f"block{b}.gat"), neighbors=frozen, return_neighbors=True)
        preds.append(decode_block(y, scope(entries, f"block{b}.dec")))
        nbr_used.append(nb)
        counts.append(y.shape[-4])

    alpha = None
    if cfg.fusion_kind == "dmfm":
        out, alpha = dmfm_fuse(preds, scope(entries, "dmfm"), return_weights=True)
    elif cfg.fusion_kind == "sum":
        out = fuse_ablation_sum(preds)
    else:
        out = fuse_mean(preds)
    if not return_details:
        return out
    details = {
        "block_preds": preds,
        "alpha": None if alpha is None else alpha.data,
        "neighbors": nbr_used,
        "segment_counts": counts,
    }
    return out, details


def mse_loss(pred: Tensor, target) -> Tensor:
    diff = pred - Tensor(np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64))
    return mean_axis(diff * diff)


def mse_mae(pred, target) -> tuple[float, float]:
    p = np.asarray(pred.data if isinstance(pred, Tensor) else pred, dtype=np.float64)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"prediction shape {p.shape} != target shape {t.shape}")
    err = p - t
    return float(np.mean(err * err)), float(np.mean(np.abs(err)))
