"""Text/video encoding: WordPiece vocabulary, episode id blocks, and the embedding front end."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .corpus import ClipEpisode, RawVisualRecord, TrisectedInputs, trisect
from .mbti import MBTIType, PersonalityProfile, all_types, personality_phrase

PAD, UNK = "[PAD]", "[UNK]"
PAD_ID, UNK_ID = 0, 1
MAX_OWNERS = 16  # people per clip with their own owner embedding
_WORD_RE = re.compile(r"\w+|[^\w\s]")


def pre_tokenize(text: str) -> List[str]:
    return _WORD_RE.findall(text.lower())


class Vocabulary:
    """Dense subword vocabulary; continuation pieces carry a ``##`` prefix."""

    def __init__(self, tokens: Sequence[str]):
        if list(tokens[:2]) != [PAD, UNK]:
            raise ValueError("vocabulary must start with [PAD], [UNK]")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate vocabulary entries")
        self._cache: Dict[str, List[int]] = {}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, tok: str) -> bool:
        return tok in self.index

    def id(self, tok: str) -> int:
        return self.index.get(tok, UNK_ID)

    def word_ids(self, word: str) -> List[int]:
        """Greedy longest-match-first split of one word; any unmatched rest makes it [UNK]."""
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        ids, start = [], 0
        while start < len(word):
            end = len(word)
            found = None
            while end > start:
                piece = word[start:end] if start == 0 else "##" + word[start:end]
                if piece in self.index:
                    found = self.index[piece]
                    break
                end -= 1
            if found is None:
                ids = [UNK_ID]
                break
            ids.append(found)
            start = end
        self._cache[word] = ids
        return ids

    def encode(self, text: str) -> List[int]:
        out: List[int] = []
        for w in pre_tokenize(text):
            out.extend(self.word_ids(w))
        return out

    def tokenize(self, text: str) -> List[str]:
        return [self.tokens[i] for i in self.encode(text)]

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


def _merge_name(a: str, b: str) -> str:
    return a + (b[2:] if b.startswith("##") else b)


def build_vocab(
    texts: Iterable[str],
    max_size: int = 2000,
    min_freq: int = 1,
    reserved: Iterable[str] = (),
) -> Vocabulary:
    """Train a WordPiece vocabulary.

    Merges the adjacent pair maximizing ``count(ab) / (count(a) * count(b))``;
    ties go to the pair seen first in the corpus. ``reserved`` words are added
    whole so that they always tokenize to a single id. The character alphabet
    is always kept, even if that exceeds ``max_size``.
    """
    counts: Counter = Counter()
    for t in texts:
        counts.update(pre_tokenize(t))
    words = [w for w, c in counts.items() if c >= min_freq]
    if not words:
        raise ValueError("no training text for the vocabulary")

    tokens: List[str] = [PAD, UNK]
    seen = set(tokens)

    def add(tok: str) -> None:
        if tok not in seen:
            seen.add(tok)
            tokens.append(tok)

    for r in reserved:
        add(r.lower())
    splits = {w: [w[0]] + ["##" + ch for ch in w[1:]] for w in words}
    for w in words:
        for piece in splits[w]:
            add(piece)

    while len(tokens) < max_size:
        pair_freq: Dict[Tuple[str, str], int] = {}
        piece_freq: Counter = Counter()
        for w in words:
            c = counts[w]
            parts = splits[w]
            for p in parts:
                piece_freq[p] += c
            for a, b in zip(parts, parts[1:]):
                pair_freq[(a, b)] = pair_freq.get((a, b), 0) + c
        candidates = [(p, f) for p, f in pair_freq.items() if f >= min_freq]
        if not candidates:
            break
        best, best_score = None, -1.0
        for (a, b), f in candidates:
            score = f / (piece_freq[a] * piece_freq[b])
            if score > best_score:
                best, best_score = (a, b), score
        a, b = best
        merged = _merge_name(a, b)
        for w in words:
            parts = splits[w]
            if len(parts) < 2:
                continue
            out, i = [], 0
            while i < len(parts):
                if i + 1 < len(parts) and parts[i] == a and parts[i + 1] == b:
                    out.append(merged)
                    i += 2
                else:
                    out.append(parts[i])
                    i += 1
            splits[w] = out
        add(merged)
    return Vocabulary(tokens)


def corpus_texts(episodes: Sequence[ClipEpisode]) -> List[str]:
    texts = []
    for e in episodes:
        texts.extend(u.text for u in e.utterances)
        texts.extend(b.text for b in e.behaviors)
        texts.extend(e.options)
    return texts


def reserved_words(episodes: Sequence[ClipEpisode]) -> List[str]:
    """Person tags and the 16 type codes, kept as whole tokens."""
    tags = sorted({t for e in episodes for t in e.profile} | {u.speaker for e in episodes for u in e.utterances})
    return [t.lower() for t in tags] + [t.code.lower() for t in all_types()]


def vocab_for_training(train: Sequence[ClipEpisode], max_size: int = 2000, min_freq: int = 1) -> Vocabulary:
    return build_vocab(corpus_texts(train), max_size=max_size, min_freq=min_freq, reserved=reserved_words(train))


class EmbeddingTable(nn.Module):
    """Trainable n_E x d_E word embeddings with a frozen all-zero pad row."""

    def __init__(self, n_tokens: int, dim: int, init_std: float = 0.1):
        super().__init__()
        weight = torch.randn(n_tokens, dim) * init_std
        weight[PAD_ID] = 0.0
        self.weight = nn.Parameter(weight)
        self.register_buffer("_keep", torch.ones(n_tokens, 1))
        self._keep[PAD_ID] = 0.0

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        # Multiplying by the keep mask pins row 0 to zero and blocks its gradient.
        return nn.functional.embedding(ids, self.weight * self._keep)


def pad_ids(seqs: Sequence[Sequence[int]], max_len: int, rows: Optional[int] = None) -> np.ndarray:
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    n = len(seqs) if rows is None else rows
    out = np.full((max(n, 0), max_len), PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs[:n]):
        s = list(s)[:max_len]
        out[i, : len(s)] = s
    return out


def encode_text(vocab: Vocabulary, table: EmbeddingTable, sentences: Sequence[str], max_len: int):
    """Returns ``(ids, mask, embeddings)`` for a block of sentences."""
    ids = pad_ids([vocab.encode(s) for s in sentences], max_len)
    ids_t = torch.from_numpy(ids)
    return ids_t, ids_t != PAD_ID, table(ids_t)


@dataclass
class EncoderConfig:
    max_utterance_len: int = 24
    max_behavior_len: int = 24
    max_option_len: int = 24
    max_phrase_len: int = 4
    max_utterances: int = 32
    max_behaviors: int = 16
    max_frames: int = 64
    speaker_tags: bool = True


@dataclass
class EncodedEpisode:
    """Id-level view of one trisected episode (past items before future items)."""

    id: str
    d_ids: np.ndarray
    d_owner: np.ndarray
    d_seg: np.ndarray
    b_ids: np.ndarray
    b_owner: np.ndarray
    b_seg: np.ndarray
    a_ids: np.ndarray
    a_owner: np.ndarray
    p_ids: np.ndarray
    p_owner: np.ndarray
    persons: List[str]
    v_raw: np.ndarray
    v_seg: np.ndarray
    gold: int


class EpisodeEncoder:
    def __init__(self, vocab: Vocabulary, cfg: Optional[EncoderConfig] = None):
        self.vocab = vocab
        self.cfg = cfg or EncoderConfig()

    def tag_id(self, tag: str) -> int:
        return self.vocab.id(tag.lower())

    @staticmethod
    def owner_slots(episode: ClipEpisode) -> Dict[str, int]:
        """Clip-local owner ids: 1 + position in the episode's own profile; 0 means no known owner."""
        persons = list(episode.profile)
        if len(persons) > MAX_OWNERS:
            raise ValueError(f"{episode.id}: {len(persons)} people exceed the {MAX_OWNERS} owner slots")
        return {p: i + 1 for i, p in enumerate(persons)}

    def phrase_ids(self, tag: str, t: Optional[MBTIType]) -> List[int]:
        words = personality_phrase(tag, t) if t is not None else [tag.lower()]
        out: List[int] = []
        for w in words:
            out.extend(self.vocab.word_ids(w))
        return out

    def encode(self, episode: ClipEpisode, profile: Optional[PersonalityProfile] = None,
               trisected: Optional[TrisectedInputs] = None) -> EncodedEpisode:
        cfg, vocab = self.cfg, self.vocab
        tri = trisected if trisected is not None else trisect(episode)
        profile = episode.profile if profile is None else profile

        utts = (tri.dialogue_past + tri.dialogue_future)[: cfg.max_utterances]
        n_past_d = min(len(tri.dialogue_past), cfg.max_utterances)
        d_text = [
            (vocab.encode(u.speaker) if cfg.speaker_tags else []) + vocab.encode(u.text) for u in utts
        ]
        behs = (tri.behavior_past + tri.behavior_future)[: cfg.max_behaviors]
        n_past_b = min(len(tri.behavior_past), cfg.max_behaviors)

        persons = list(episode.profile)
        slot = self.owner_slots(episode)
        if episode.visual is not None:
            frames = list(tri.video_past) + list(tri.video_future)
            frames = frames[: cfg.max_frames]
            raw = np.concatenate([episode.visual.v2d, episode.visual.v3d], axis=1)[frames]
            n_past_v = min(len(tri.video_past), cfg.max_frames)
            v_seg = np.array([0] * n_past_v + [1] * (len(frames) - n_past_v), dtype=np.int64)
        else:
            raw = np.zeros((0, 0), dtype=np.float32)
            v_seg = np.zeros(0, dtype=np.int64)

        return EncodedEpisode(
            id=episode.id,
            d_ids=pad_ids(d_text, cfg.max_utterance_len),
            d_owner=np.array([slot.get(u.speaker, 0) for u in utts], dtype=np.int64),
            d_seg=np.array([0] * n_past_d + [1] * (len(utts) - n_past_d), dtype=np.int64),
            b_ids=pad_ids([vocab.encode(b.text) for b in behs], cfg.max_behavior_len),
            b_owner=np.array([slot.get(b.subject, 0) for b in behs], dtype=np.int64),
            b_seg=np.array([0] * n_past_b + [1] * (len(behs) - n_past_b), dtype=np.int64),
            a_ids=pad_ids([vocab.encode(o) for o in episode.options], cfg.max_option_len),
            a_owner=np.full(len(episode.options), slot.get(episode.target_person, 0), dtype=np.int64),
            p_ids=pad_ids([self.phrase_ids(p, profile.get(p)) for p in persons], cfg.max_phrase_len),
            p_owner=np.array([slot[p] for p in persons], dtype=np.int64),
            persons=persons,
            v_raw=raw.astype(np.float32),
            v_seg=v_seg,
            gold=episode.gold,
        )


def _stack(blocks: Sequence[np.ndarray], width: int, fill=0, dtype=np.int64, min_rows: int = 1) -> np.ndarray:
    rows = max([b.shape[0] for b in blocks] + [min_rows])
    shape = (len(blocks), rows) + ((width,) if width else ())
    out = np.full(shape, fill, dtype=dtype)
    for i, b in enumerate(blocks):
        if b.shape[0]:
            out[i, : b.shape[0]] = b
    return out


@dataclass
class IdBatch:
    """Padded id tensors for a batch of encoded episodes."""

    d_ids: torch.Tensor
    d_owner: torch.Tensor
    d_seg: torch.Tensor
    b_ids: torch.Tensor
    b_owner: torch.Tensor
    b_seg: torch.Tensor
    a_ids: torch.Tensor
    a_owner: torch.Tensor
    p_ids: torch.Tensor
    p_owner: torch.Tensor
    v_raw: torch.Tensor
    v_mask: torch.Tensor
    v_seg: torch.Tensor
    gold: torch.Tensor

    @property
    def size(self) -> int:
        return self.a_ids.shape[0]


def collate(items: Sequence[EncodedEpisode], d_raw: int) -> IdBatch:
    t = torch.from_numpy
    l_d = items[0].d_ids.shape[1]
    l_b = items[0].b_ids.shape[1]
    l_p = items[0].p_ids.shape[1]
    n_v = max([x.v_raw.shape[0] for x in items] + [1])
    v_raw = np.zeros((len(items), n_v, d_raw), dtype=np.float32)
    v_mask = np.zeros((len(items), n_v), dtype=bool)
    for i, x in enumerate(items):
        if x.v_raw.shape[0]:
            v_raw[i, : x.v_raw.shape[0]] = x.v_raw
            v_mask[i, : x.v_raw.shape[0]] = True
    return IdBatch(
        d_ids=t(_stack([x.d_ids for x in items], l_d)),
        d_owner=t(_stack([x.d_owner for x in items], 0)),
        d_seg=t(_stack([x.d_seg for x in items], 0)),
        b_ids=t(_stack([x.b_ids for x in items], l_b)),
        b_owner=t(_stack([x.b_owner for x in items], 0)),
        b_seg=t(_stack([x.b_seg for x in items], 0)),
        a_ids=t(np.stack([x.a_ids for x in items])),
        a_owner=t(np.stack([x.a_owner for x in items])),
        p_ids=t(_stack([x.p_ids for x in items], l_p)),
        p_owner=t(_stack([x.p_owner for x in items], 0)),
        v_raw=t(v_raw),
        v_mask=t(v_mask),
        v_seg=t(_stack([x.v_seg for x in items], 0)),
        gold=torch.tensor([x.gold for x in items], dtype=torch.long),
    )


@dataclass
class FeatureBundle:
    """Dense inputs at model width d, with a leading batch axis.

    V: (b, n_V, d); D: (b, n_D, l_D, d); B: (b, n_B, l_B, d);
    A: (b, 4, l_A, d); P: (b, n_P, l_P, d). Masks are True at real positions.
    """

    V: torch.Tensor
    V_mask: torch.Tensor
    D: torch.Tensor
    D_mask: torch.Tensor
    B: torch.Tensor
    B_mask: torch.Tensor
    A: torch.Tensor
    A_mask: torch.Tensor
    P: torch.Tensor
    P_mask: torch.Tensor

    def map(self, fn) -> "FeatureBundle":
        return FeatureBundle(**{k: fn(v) for k, v in self.__dict__.items()})


def project_video(projection: nn.Linear, raw: RawVisualRecord | torch.Tensor) -> torch.Tensor:
    """Per-frame concat of 2D and 3D features followed by the linear map to width d."""
    if isinstance(raw, RawVisualRecord):
        x = torch.from_numpy(np.concatenate([raw.v2d, raw.v3d], axis=1))
    else:
        x = raw
    if x.shape[-1] != projection.in_features:
        raise ValueError(f"expected {projection.in_features} raw visual features, got {x.shape[-1]}")
    return projection(x.to(projection.weight.dtype))


class Embedder(nn.Module):
    """Shared front end: word table, video projection, segment and owner embeddings.

    Every token of an utterance, behavior, option or personality phrase gets
    its owner's embedding added (speaker, subject, target person and described
    character respectively) when ``owner_embedding`` is on. Owners are
    clip-local slots, so matching a profile to a speaker does not have to be
    learned separately for every character.
    """

    def __init__(self, n_tokens: int, dim: int, d_raw: int, owner_embedding: bool = True,
                 segment_embedding: bool = True, init_std: float = 0.1):
        super().__init__()
        self.table = EmbeddingTable(n_tokens, dim, init_std)
        self.video_proj = nn.Linear(d_raw, dim)
        self.segment = nn.Parameter(torch.randn(2, dim) * init_std) if segment_embedding else None
        self.owner_embedding = owner_embedding
        self.owner = nn.Parameter(torch.randn(MAX_OWNERS + 1, dim) * init_std) if owner_embedding else None
        self.dim = dim
        self.d_raw = d_raw

    def _text(self, ids, owner=None, seg=None):
        mask = ids != PAD_ID
        x = self.table(ids)
        if owner is not None and self.owner_embedding:
            x = x + self.owner[owner].unsqueeze(-2)
        if seg is not None and self.segment is not None:
            x = x + self.segment[seg].unsqueeze(-2)
        return x * mask.unsqueeze(-1).to(x.dtype), mask

    def forward(self, batch: IdBatch) -> FeatureBundle:
        D, D_mask = self._text(batch.d_ids, batch.d_owner, batch.d_seg)
        B, B_mask = self._text(batch.b_ids, batch.b_owner, batch.b_seg)
        A, A_mask = self._text(batch.a_ids, batch.a_owner)
        P, P_mask = self._text(batch.p_ids, batch.p_owner)
        V = project_video(self.video_proj, batch.v_raw)
        if self.segment is not None:
            V = V + self.segment[batch.v_seg]
        V = V * batch.v_mask.unsqueeze(-1).to(V.dtype)
        return FeatureBundle(V, batch.v_mask, D, D_mask, B, B_mask, A, A_mask, P, P_mask)

    def person_query(self, tag_ids: torch.Tensor, owner: torch.Tensor):
        """Embedded name-tag phrase used as the predictor's query: (b, l, d) and mask."""
        return self._text(tag_ids, owner)


def encode_episode(episode: ClipEpisode, trisected: TrisectedInputs, encoder: EpisodeEncoder,
                   embedder: Embedder, profile: Optional[PersonalityProfile] = None) -> FeatureBundle:
    enc = encoder.encode(episode, profile=profile, trisected=trisected)
    return embedder(collate([enc], embedder.d_raw))
