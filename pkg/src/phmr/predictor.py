"""Two-stage personality prediction: four sigmoid heads over a PRM-like backbone,
then substitution of the predicted profile into the reasoner."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .corpus import ClipEpisode
from .encoders import Embedder, EncodedEpisode, EpisodeEncoder, IdBatch, UNK_ID, collate, pad_ids
from .mbti import AXES, MBTIType, PersonalityProfile, from_first_pole_bits
from .reasoner import AttentionBlock, masked_mean

PREDICTOR_MODALITIES = ("D", "V")


@dataclass(frozen=True)
class DimensionScores:
    """Probability of the first pole (E, S, T, J) on each axis."""

    scores: Tuple[float, float, float, float]

    def __post_init__(self):
        if len(self.scores) != 4 or any(not 0.0 <= s <= 1.0 for s in self.scores):
            raise ValueError(f"invalid dimension scores {self.scores}")


def threshold_type(scores: Sequence[float], tau: float = 0.5) -> MBTIType:
    """First pole iff score >= tau."""
    return from_first_pole_bits([int(s >= tau) for s in scores])


@dataclass
class PredictedProfile:
    types: PersonalityProfile
    scores: Dict[str, DimensionScores]

    def to_json(self) -> dict:
        return self.types.to_dict()

    def scores_json(self) -> dict:
        return {tag: list(s.scores) for tag, s in self.scores.items()}


def threshold_profile(scores: Mapping[str, Sequence[float]], tau: float = 0.5) -> PredictedProfile:
    types = PersonalityProfile((tag, threshold_type(s, tau)) for tag, s in scores.items())
    return PredictedProfile(types, {tag: DimensionScores(tuple(float(x) for x in s)) for tag, s in scores.items()})


@dataclass
class PredictorConfig:
    n_tokens: int
    dim: int = 128
    d_raw: int = 24
    heads: int = 4
    dropout: float = 0.1
    use_D: bool = True
    use_V: bool = True
    owner_embedding: bool = True
    segment_embedding: bool = True
    zero_init_heads: bool = False
    init_std: float = 0.1

    def to_json(self) -> dict:
        return asdict(self)


class PersonalityPredictor(nn.Module):
    """Person query attends over V and D; pooled features summed; one sigmoid head per axis."""

    def __init__(self, cfg: PredictorConfig):
        super().__init__()
        if not (cfg.use_D or cfg.use_V):
            raise ValueError("predictor needs at least one of D, V")
        self.cfg = cfg
        d = cfg.dim
        self.embedder = Embedder(cfg.n_tokens, d, cfg.d_raw, cfg.owner_embedding, cfg.segment_embedding, cfg.init_std)
        self.query_attn = nn.ModuleDict({m: AttentionBlock(d, cfg.heads, cfg.dropout) for m in PREDICTOR_MODALITIES})
        self.pool_drop = nn.Dropout(cfg.dropout)
        self.heads = nn.ModuleList([nn.Linear(d, 1) for _ in AXES])
        if cfg.zero_init_heads:
            for h in self.heads:
                nn.init.zeros_(h.weight)
                nn.init.zeros_(h.bias)

    def modalities(self) -> List[str]:
        return [m for m in PREDICTOR_MODALITIES if getattr(self.cfg, f"use_{m}")]

    def pooled(self, V, V_mask, D, D_mask, query, query_mask) -> torch.Tensor:
        b = query.shape[0]
        total = torch.zeros(b, self.cfg.dim, dtype=query.dtype)
        for m in self.modalities():
            if m == "D":
                X, X_mask = D.reshape(b, -1, D.shape[-1]), D_mask.reshape(b, -1)
            else:
                X, X_mask = V, V_mask
            X_Q = self.query_attn[m](query, X, X_mask)
            total = total + masked_mean(X_Q, query_mask)
        return self.pool_drop(total)

    def head_logits(self, pooled: torch.Tensor) -> torch.Tensor:
        return torch.cat([h(pooled) for h in self.heads], dim=-1)

    def forward(self, V, V_mask, D, D_mask, query, query_mask) -> torch.Tensor:
        """(b, 4) first-pole probabilities."""
        return torch.sigmoid(self.head_logits(self.pooled(V, V_mask, D, D_mask, query, query_mask)))

    def batch_logits(self, batch: "PersonBatch") -> torch.Tensor:
        bundle = self.embedder(batch.ids)
        query, qmask = self.embedder.person_query(batch.query_ids, batch.query_owner)
        return self.head_logits(self.pooled(bundle.V, bundle.V_mask, bundle.D, bundle.D_mask, query, qmask))

    def loss(self, batch: "PersonBatch") -> torch.Tensor:
        return multilabel_loss_logits(self.batch_logits(batch), batch.targets)

    def parameter_groups(self):
        fusion, rest = [], []
        for name, p in self.named_parameters():
            if name.startswith("heads.") or name.startswith("embedder.video_proj."):
                fusion.append((name, p))
            else:
                rest.append((name, p))
        return {"fusion_linear": fusion, "rest": rest}


def predict_dimensions(model: PersonalityPredictor, V, V_mask, D, D_mask, person_query, query_mask) -> torch.Tensor:
    return model(V, V_mask, D, D_mask, person_query, query_mask)


def multilabel_loss(scores: torch.Tensor, gold_bits: torch.Tensor) -> torch.Tensor:
    """Sum over the four axes of binary cross-entropy; mean over the batch."""
    return F.binary_cross_entropy(scores, gold_bits.to(scores.dtype), reduction="none").sum(-1).mean()


def multilabel_loss_logits(logits: torch.Tensor, gold_bits: torch.Tensor) -> torch.Tensor:
    return F.binary_cross_entropy_with_logits(logits, gold_bits.to(logits.dtype), reduction="none").sum(-1).mean()


@dataclass
class PersonSample:
    episode: EncodedEpisode
    person: str
    query_ids: np.ndarray
    query_owner: int
    target: Optional[Tuple[int, int, int, int]]


@dataclass
class PersonBatch:
    ids: IdBatch
    query_ids: torch.Tensor
    query_owner: torch.Tensor
    targets: torch.Tensor
    persons: List[Tuple[str, str]]

    @property
    def size(self) -> int:
        return self.query_ids.shape[0]


def person_samples(episodes: Sequence[ClipEpisode], encoded: Sequence[EncodedEpisode],
                   encoder: EpisodeEncoder, with_targets: bool = True) -> List[PersonSample]:
    """One sample per (clip, character in the clip)."""
    out = []
    for ep, enc in zip(episodes, encoded):
        for tag in ep.profile:
            if encoder.tag_id(tag) == UNK_ID:
                raise ValueError(f"unknown person tag {tag!r}: not in the vocabulary")
            q = pad_ids([encoder.phrase_ids(tag, None)], encoder.cfg.max_phrase_len)[0]
            target = ep.profile[tag].first_pole_bits() if with_targets else None
            out.append(PersonSample(enc, tag, q, encoder.owner_slots(ep)[tag], target))
    return out


def collate_persons(samples: Sequence[PersonSample], d_raw: int) -> PersonBatch:
    ids = collate([s.episode for s in samples], d_raw)
    targets = [s.target if s.target is not None else (0, 0, 0, 0) for s in samples]
    return PersonBatch(
        ids=ids,
        query_ids=torch.from_numpy(np.stack([s.query_ids for s in samples])),
        query_owner=torch.tensor([s.query_owner for s in samples], dtype=torch.long),
        targets=torch.tensor(targets, dtype=torch.float32),
        persons=[(s.episode.id, s.person) for s in samples],
    )


@torch.no_grad()
def score_persons(model: PersonalityPredictor, samples: Sequence[PersonSample], batch_size: int = 64) -> np.ndarray:
    model.eval()
    out = []
    for i in range(0, len(samples), batch_size):
        batch = collate_persons(samples[i : i + batch_size], model.cfg.d_raw)
        out.append(torch.sigmoid(model.batch_logits(batch)).double().numpy())
    return np.concatenate(out) if out else np.zeros((0, 4))


def predicted_profiles(samples: Sequence[PersonSample], scores: np.ndarray, pooling: str = "character",
                       tau: float = 0.5) -> Dict[str, PredictedProfile]:
    """Per-clip predicted profiles.

    ``pooling="clip"`` uses each clip's own scores; ``"character"`` averages a
    character's scores over every clip scored in this call, so one character
    gets a single consistent type.
    """
    if pooling not in ("clip", "character"):
        raise ValueError(f"unknown pooling {pooling!r}")
    by_char: Dict[str, List[np.ndarray]] = {}
    for s, row in zip(samples, scores):
        by_char.setdefault(s.person, []).append(row)
    char_mean = {tag: np.mean(rows, axis=0) for tag, rows in by_char.items()}
    per_clip: Dict[str, Dict[str, np.ndarray]] = {}
    for s, row in zip(samples, scores):
        per_clip.setdefault(s.episode.id, {})[s.person] = char_mean[s.person] if pooling == "character" else row
    return {eid: threshold_profile(d, tau) for eid, d in per_clip.items()}


def save_predicted_profiles(path, profiles: Mapping[str, PredictedProfile]) -> None:
    """Per-clip JSON profiles plus a ``.scores.json`` sidecar."""
    path = Path(path)
    path.write_text(json.dumps({eid: p.to_json() for eid, p in profiles.items()}, sort_keys=True, indent=1))
    path.with_name(path.stem + ".scores.json").write_text(
        json.dumps({eid: p.scores_json() for eid, p in profiles.items()}, sort_keys=True, indent=1)
    )


def load_predicted_profiles(path) -> Dict[str, PersonalityProfile]:
    d = json.loads(Path(path).read_text())
    return {eid: PersonalityProfile.from_dict(p) for eid, p in d.items()}
