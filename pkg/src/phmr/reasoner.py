"""Personality-aware reasoning model: personality enhancement, cross-modal
attention per modality, and decision-level additive fusion over four options."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .encoders import Embedder, FeatureBundle, IdBatch

MODALITIES = ("D", "V", "B")
CHECKPOINT_FORMAT = "phmr-checkpoint"
CHECKPOINT_VERSION = 1


class AttentionBlock(nn.Module):
    """Scaled dot-product multi-head attention, residual connection, layer norm.

    Masked keys get exactly zero weight. A query with no valid key receives
    no attention term at all, so the block reduces to ``norm(query)``.
    """

    def __init__(self, dim: int, heads: int = 4, dropout: float = 0.1):
        super().__init__()
        if dim % heads:
            raise ValueError(f"width {dim} not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)
        self.norm = nn.LayerNorm(dim)
        self.drop = nn.Dropout(dropout)

    def _split(self, x):
        *lead, n, _ = x.shape
        return x.reshape(*lead, n, self.heads, self.dim // self.heads).transpose(-2, -3)

    def forward(self, query, context, context_mask, return_weights: bool = False):
        q, k, v = self._split(self.q(query)), self._split(self.k(context)), self._split(self.v(context))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.dim // self.heads)
        key_ok = context_mask.unsqueeze(-2).unsqueeze(-3)  # (..., 1, 1, Lk)
        has_key = context_mask.any(-1)  # (...)
        scores = scores.masked_fill(~key_ok, float("-inf"))
        scores = scores.masked_fill(~has_key[..., None, None, None], 0.0)
        weights = torch.softmax(scores, dim=-1) * has_key[..., None, None, None].to(scores.dtype)
        ctx = self.drop(weights) @ v
        ctx = ctx.transpose(-2, -3).reshape(*query.shape[:-1], self.dim)
        out = self.o(ctx) * has_key[..., None, None].to(ctx.dtype)
        y = self.norm(query + out)
        return (y, weights) if return_weights else y


@dataclass(frozen=True)
class ModalityMask:
    use_D: bool = True
    use_V: bool = True
    use_B: bool = True
    use_P: bool = True

    def __post_init__(self):
        if not (self.use_D or self.use_V or self.use_B):
            raise ValueError("at least one of D, V, B must be enabled")

    def enabled(self) -> List[str]:
        return [m for m in MODALITIES if getattr(self, f"use_{m}")]

    @classmethod
    def parse(cls, spec: str, use_P: bool = True) -> "ModalityMask":
        """``"D+V+B"`` style modality lists."""
        mods = {m.strip().upper() for m in spec.replace(",", "+").split("+") if m.strip()}
        bad = mods - set(MODALITIES)
        if bad:
            raise ValueError(f"unknown modalities {sorted(bad)}")
        return cls("D" in mods, "V" in mods, "B" in mods, use_P)

    def label(self) -> str:
        return "+".join(self.enabled()) + ("" if self.use_P else " -P")


@dataclass
class PRMConfig:
    n_tokens: int
    dim: int = 128
    d_raw: int = 24
    heads: int = 4
    dropout: float = 0.1
    owner_embedding: bool = True
    segment_embedding: bool = True
    zero_init_output: bool = False
    init_std: float = 0.1

    def to_json(self) -> dict:
        return asdict(self)


def option_softmax(logits: torch.Tensor) -> torch.Tensor:
    """Softmax over the last axis whose normalizer is summed in sorted order,
    so permuting the options permutes the output bit for bit."""
    z = torch.exp(logits - logits.max(dim=-1, keepdim=True).values)
    return z / torch.sort(z, dim=-1).values.sum(dim=-1, keepdim=True)


def masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean over axis -2 counting only positions where ``mask`` is True."""
    m = mask.unsqueeze(-1).to(x.dtype)
    return (x * m).sum(-2) / m.sum(-2).clamp(min=1.0)


def _flatten_tokens(x: torch.Tensor, mask: torch.Tensor):
    b = x.shape[0]
    return x.reshape(b, -1, x.shape[-1]), mask.reshape(b, -1)


class PRM(nn.Module):
    def __init__(self, cfg: PRMConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.dim
        self.embedder = Embedder(cfg.n_tokens, d, cfg.d_raw, cfg.owner_embedding, cfg.segment_embedding, cfg.init_std)
        self.personality_self = AttentionBlock(d, cfg.heads, cfg.dropout)
        self.personality_attn = nn.ModuleDict({m: AttentionBlock(d, cfg.heads, cfg.dropout) for m in MODALITIES})
        self.answer_attn = nn.ModuleDict({m: AttentionBlock(d, cfg.heads, cfg.dropout) for m in MODALITIES})
        self.out = nn.ModuleDict({m: nn.Linear(d, 1) for m in MODALITIES})
        self.pool_drop = nn.Dropout(cfg.dropout)
        if cfg.zero_init_output:
            for lin in self.out.values():
                nn.init.zeros_(lin.weight)
                nn.init.zeros_(lin.bias)

    # -- building blocks ---------------------------------------------------

    def enhance_personality(self, P: torch.Tensor, P_mask: torch.Tensor):
        """(b, n_P, l_P, d) -> P_C of shape (b, 2 * n_P * l_P, d): [self-attention(P); P]."""
        flat, mask = _flatten_tokens(P, P_mask)
        attended = self.personality_self(flat, flat, mask)
        return torch.cat([attended, flat], dim=1), torch.cat([mask, mask], dim=1)

    def attend_personality(self, m: str, X, X_mask, P_C, PC_mask):
        return self.personality_attn[m](X, P_C, PC_mask)

    def attend_answer(self, m: str, A, X_P, X_mask):
        """Each option's tokens query the context independently: (b, 4, l_A, d)."""
        return self.answer_attn[m](A, X_P.unsqueeze(1), X_mask.unsqueeze(1))

    def modality_score(self, m: str, X_A, A_mask) -> torch.Tensor:
        pooled = self.pool_drop(masked_mean(X_A, A_mask))
        return self.out[m](pooled).squeeze(-1)

    def _context(self, bundle: FeatureBundle, m: str):
        if m == "V":
            return bundle.V, bundle.V_mask
        x, mask = (bundle.D, bundle.D_mask) if m == "D" else (bundle.B, bundle.B_mask)
        return _flatten_tokens(x, mask)

    # -- forward -----------------------------------------------------------

    def modality_scores(self, bundle: FeatureBundle, mask: ModalityMask) -> Dict[str, torch.Tensor]:
        """Per-modality 4-score vectors for the enabled modalities."""
        if mask.use_P:
            P_C, PC_mask = self.enhance_personality(bundle.P, bundle.P_mask)
        out = {}
        for m in mask.enabled():
            X, X_mask = self._context(bundle, m)
            X_P = self.attend_personality(m, X, X_mask, P_C, PC_mask) if mask.use_P else X
            X_A = self.attend_answer(m, bundle.A, X_P, X_mask)
            out[m] = self.modality_score(m, X_A, bundle.A_mask)
        return out

    def logits(self, bundle: FeatureBundle, mask: ModalityMask = ModalityMask()) -> torch.Tensor:
        scores = self.modality_scores(bundle, mask)
        total = torch.zeros_like(bundle.A[..., 0, 0])
        for m in MODALITIES:
            if m in scores:
                total = total + scores[m]
        return total

    def forward(self, bundle: FeatureBundle, mask: ModalityMask = ModalityMask()) -> torch.Tensor:
        """Answer distribution over the four options, shape (b, 4)."""
        return option_softmax(self.logits(bundle, mask))

    def embed(self, batch: IdBatch) -> FeatureBundle:
        return self.embedder(batch)

    def loss(self, batch: IdBatch, mask: ModalityMask) -> torch.Tensor:
        return F.cross_entropy(self.logits(self.embed(batch), mask), batch.gold)

    def parameter_groups(self) -> Dict[str, List[Tuple[str, nn.Parameter]]]:
        """Learning-rate groups: output linears plus video projection vs the rest."""
        fusion, rest = [], []
        for name, p in self.named_parameters():
            if name.startswith("out.") or name.startswith("embedder.video_proj."):
                fusion.append((name, p))
            else:
                rest.append((name, p))
        return {"fusion_linear": fusion, "rest": rest}

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def predict(probs: torch.Tensor) -> torch.Tensor:
    """Argmax with ties resolved to the lowest index."""
    return probs.argmax(dim=-1)


def prm_forward(model: PRM, bundle: FeatureBundle, mask: ModalityMask = ModalityMask()) -> torch.Tensor:
    return model(bundle, mask)


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(path, model: nn.Module, config: dict, kind: str) -> None:
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    meta = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "kind": kind, "config": config}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def read_checkpoint(path) -> Tuple[dict, Dict[str, np.ndarray]]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(bytes(z["__meta__"]).decode("utf-8"))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a checkpoint")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        params = {k[len("param/") :]: z[k] for k in z.files if k.startswith("param/")}
    return meta, params


def load_state(model: nn.Module, params: Dict[str, np.ndarray]) -> None:
    state = model.state_dict()
    missing = set(state) - set(params)
    extra = set(params) - set(state)
    if missing or extra:
        raise ValueError(f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for k, v in params.items():
        if tuple(state[k].shape) != v.shape:
            raise ValueError(f"shape mismatch for {k}: model {tuple(state[k].shape)}, file {v.shape}")
    model.load_state_dict({k: torch.from_numpy(np.array(v)) for k, v in params.items()})


def load_prm(path) -> PRM:
    meta, params = read_checkpoint(path)
    if meta["kind"] != "prm":
        raise ValueError(f"{path}: expected a prm checkpoint, got {meta['kind']}")
    model = PRM(PRMConfig(**meta["config"]["model"]))
    load_state(model, params)
    return model
