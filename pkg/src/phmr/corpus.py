"""Clip episodes, timeline trisection, dataset splits, statistics and on-disk format."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .mbti import PersonalityProfile

SCHEMA = "phmr-1"
N_OPTIONS = 4
_SIDECAR_MAGIC = b"PHMRVIS1"


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class TimeSpan:
    start: float
    end: float

    def __post_init__(self):
        if self.start < 0:
            raise CorpusError(f"negative span start {self.start}")
        if self.start > self.end:
            raise CorpusError(f"span start {self.start} after end {self.end}")

    def overlaps(self, other: "TimeSpan") -> bool:
        return not (self.end <= other.start or self.start >= other.end)

    def to_list(self) -> List[float]:
        return [self.start, self.end]


@dataclass(frozen=True)
class Utterance:
    speaker: str
    text: str
    span: TimeSpan

    def __post_init__(self):
        if not self.text.strip():
            raise CorpusError("empty utterance text")


@dataclass(frozen=True)
class Behavior:
    subject: str
    text: str
    span: TimeSpan

    def __post_init__(self):
        if not self.text.strip():
            raise CorpusError("empty behavior text")
        if self.text.rstrip().endswith("?"):
            raise CorpusError(f"behavior must be declarative: {self.text!r}")


@dataclass
class RawVisualRecord:
    """Precomputed 2D/3D frame features with per-frame timestamps (seconds)."""

    v2d: np.ndarray
    v3d: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        self.v2d = np.asarray(self.v2d, dtype=np.float32)
        self.v3d = np.asarray(self.v3d, dtype=np.float32)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float32)
        if self.v2d.ndim != 2 or self.v3d.ndim != 2:
            raise CorpusError("visual feature arrays must be 2-D")
        if self.v2d.shape[0] != self.v3d.shape[0]:
            raise CorpusError(
                f"frame count mismatch: V2D has {self.v2d.shape[0]}, V3D has {self.v3d.shape[0]}"
            )
        if self.timestamps.shape != (self.v2d.shape[0],):
            raise CorpusError("one timestamp per frame required")
        if np.any(np.diff(self.timestamps) < 0):
            raise CorpusError("frame timestamps must be non-decreasing")

    @property
    def n_frames(self) -> int:
        return self.v2d.shape[0]

    def __eq__(self, other):
        if not isinstance(other, RawVisualRecord):
            return NotImplemented
        return (
            np.array_equal(self.v2d, other.v2d)
            and np.array_equal(self.v3d, other.v3d)
            and np.array_equal(self.timestamps, other.timestamps)
        )


@dataclass
class ClipEpisode:
    id: str
    duration: float
    utterances: List[Utterance]
    behaviors: List[Behavior]
    profile: PersonalityProfile
    present_span: TimeSpan
    options: List[str]
    gold: int
    target_person: str
    visual: Optional[RawVisualRecord] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if len(self.options) != N_OPTIONS:
            raise CorpusError(f"{self.id}: expected {N_OPTIONS} options, got {len(self.options)}")
        if not 0 <= self.gold < N_OPTIONS:
            raise CorpusError(f"{self.id}: gold index {self.gold} out of range")
        if self.present_span.end > self.duration:
            raise CorpusError(f"{self.id}: present span exceeds clip duration")
        if self.target_person not in self.profile:
            raise CorpusError(f"{self.id}: target {self.target_person!r} missing from profile")

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA,
            "id": self.id,
            "duration": self.duration,
            "utterances": [
                {"speaker": u.speaker, "text": u.text, "span": u.span.to_list()} for u in self.utterances
            ],
            "behaviors": [
                {"subject": b.subject, "text": b.text, "span": b.span.to_list()} for b in self.behaviors
            ],
            "profile": self.profile.to_dict(),
            "present_span": self.present_span.to_list(),
            "options": list(self.options),
            "gold": self.gold,
            "target_person": self.target_person,
            "visual_features": self.id if self.visual is not None else None,
        }

    @classmethod
    def from_json(cls, d: dict, visual: Optional[RawVisualRecord] = None) -> "ClipEpisode":
        if d.get("schema") != SCHEMA:
            raise CorpusError(f"unsupported schema {d.get('schema')!r}")
        return cls(
            id=d["id"],
            duration=float(d["duration"]),
            utterances=[Utterance(u["speaker"], u["text"], TimeSpan(*u["span"])) for u in d["utterances"]],
            behaviors=[Behavior(b["subject"], b["text"], TimeSpan(*b["span"])) for b in d["behaviors"]],
            profile=PersonalityProfile.from_dict(d["profile"]),
            present_span=TimeSpan(*d["present_span"]),
            options=list(d["options"]),
            gold=int(d["gold"]),
            target_person=d["target_person"],
            visual=visual,
        )


@dataclass
class TrisectedInputs:
    dialogue_past: List[Utterance]
    dialogue_future: List[Utterance]
    behavior_past: List[Behavior]
    behavior_future: List[Behavior]
    video_past: range
    video_future: range


def _side(span: TimeSpan, present: TimeSpan) -> Optional[str]:
    # Past is tested first so a zero-length present span cannot claim an item twice.
    if span.end <= present.start:
        return "past"
    if span.start >= present.end:
        return "future"
    return None


def trisect(episode: ClipEpisode) -> TrisectedInputs:
    """Split dialogue, behaviors and frames around the present span.

    Items touching a present boundary go to the outer side; anything that
    overlaps the present span is dropped from both sides.
    """
    present = episode.present_span
    out = TrisectedInputs([], [], [], [], range(0), range(0))
    for u in episode.utterances:
        side = _side(u.span, present)
        if side == "past":
            out.dialogue_past.append(u)
        elif side == "future":
            out.dialogue_future.append(u)
    for b in episode.behaviors:
        side = _side(b.span, present)
        if side == "past":
            out.behavior_past.append(b)
        elif side == "future":
            out.behavior_future.append(b)
    if episode.visual is not None:
        ts = episode.visual.timestamps
        n_past = int(np.searchsorted(ts, present.start, side="right"))
        first_future = int(np.searchsorted(ts, present.end, side="left"))
        first_future = max(first_future, n_past)
        out.video_past = range(0, n_past)
        out.video_future = range(first_future, len(ts))
    return out


@dataclass(frozen=True)
class CorpusSplit:
    train: Tuple[str, ...]
    validation: Tuple[str, ...]
    test: Tuple[str, ...]

    def __post_init__(self):
        a, b, c = set(self.train), set(self.validation), set(self.test)
        if a & b or a & c or b & c:
            raise CorpusError("split parts overlap")

    def to_json(self) -> dict:
        return {"train": list(self.train), "validation": list(self.validation), "test": list(self.test)}

    @classmethod
    def from_json(cls, d: dict) -> "CorpusSplit":
        return cls(tuple(d["train"]), tuple(d["validation"]), tuple(d["test"]))


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 stream; used everywhere a seeded RNG is needed."""
    return np.random.Generator(np.random.PCG64(seed))


def _apportion(n: int, ratios: Sequence[float]) -> List[int]:
    total = float(sum(ratios))
    exact = [n * r / total for r in ratios]
    sizes = [int(np.floor(x)) for x in exact]
    remainders = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in remainders[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split_corpus(episodes: Sequence[ClipEpisode], ratios=(3, 1, 1), seed: int = 0) -> CorpusSplit:
    if len(episodes) < 5:
        raise CorpusError(f"need at least 5 episodes to split, got {len(episodes)}")
    ids = [e.id for e in episodes]
    order = make_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_train, n_val, _ = _apportion(len(ids), ratios)
    return CorpusSplit(
        tuple(shuffled[:n_train]),
        tuple(shuffled[n_train : n_train + n_val]),
        tuple(shuffled[n_train + n_val :]),
    )


def build_mpp_split(all_clips: Sequence[ClipEpisode], phmrd_ids: Iterable[str], seed: int = 0) -> CorpusSplit:
    """Personality-prediction split: non-reasoning clips 80/20, reasoning clips as test."""
    phmrd = list(phmrd_ids)
    phmrd_set = set(phmrd)
    known = {e.id for e in all_clips}
    missing = phmrd_set - known
    if missing:
        raise CorpusError(f"{len(missing)} reasoning ids not in the clip pool")
    rest = [e.id for e in all_clips if e.id not in phmrd_set]
    if not rest:
        raise CorpusError("no clips outside the reasoning corpus")
    order = make_rng(seed).permutation(len(rest))
    shuffled = [rest[i] for i in order]
    n_train, _ = _apportion(len(rest), (4, 1))
    return CorpusSplit(tuple(shuffled[:n_train]), tuple(shuffled[n_train:]), tuple(phmrd))


def _n_tokens(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class CorpusStatistics:
    n_episodes: int
    avg_seconds: float
    avg_behaviors: float
    avg_utterances: float
    avg_personalities: float
    avg_option_length: float
    avg_behavior_length: float
    avg_utterance_length: float

    def to_dict(self) -> Dict[str, float]:
        return dict(self.__dict__)


def corpus_statistics(episodes: Sequence[ClipEpisode]) -> CorpusStatistics:
    if not episodes:
        raise CorpusError("statistics of an empty corpus")
    options = [_n_tokens(o) for e in episodes for o in e.options]
    behaviors = [_n_tokens(b.text) for e in episodes for b in e.behaviors]
    utterances = [_n_tokens(u.text) for e in episodes for u in e.utterances]
    return CorpusStatistics(
        n_episodes=len(episodes),
        avg_seconds=float(np.mean([e.duration for e in episodes])),
        avg_behaviors=float(np.mean([len(e.behaviors) for e in episodes])),
        avg_utterances=float(np.mean([len(e.utterances) for e in episodes])),
        avg_personalities=float(np.mean([len(e.profile) for e in episodes])),
        avg_option_length=float(np.mean(options)),
        avg_behavior_length=float(np.mean(behaviors)) if behaviors else 0.0,
        avg_utterance_length=float(np.mean(utterances)) if utterances else 0.0,
    )


# -- on-disk format ---------------------------------------------------------


def sidecar_path(corpus_path: Path) -> Path:
    corpus_path = Path(corpus_path)
    return corpus_path.with_name(corpus_path.name + ".vis")


def write_sidecar(path: Path, records: Dict[str, RawVisualRecord]) -> None:
    """Little-endian float32 records, each preceded by a JSON header."""
    with open(path, "wb") as f:
        f.write(_SIDECAR_MAGIC)
        for eid, rec in records.items():
            header = json.dumps(
                {
                    "episode_id": eid,
                    "n_V": rec.n_frames,
                    "d_raw": rec.v2d.shape[1] + rec.v3d.shape[1],
                    "d_2D": rec.v2d.shape[1],
                    "d_3D": rec.v3d.shape[1],
                },
                sort_keys=True,
            ).encode("utf-8")
            f.write(struct.pack("<I", len(header)))
            f.write(header)
            f.write(rec.timestamps.astype("<f4").tobytes())
            f.write(np.concatenate([rec.v2d, rec.v3d], axis=1).astype("<f4").tobytes())


def read_sidecar(path: Path) -> Dict[str, RawVisualRecord]:
    out: Dict[str, RawVisualRecord] = {}
    data = Path(path).read_bytes()
    if not data.startswith(_SIDECAR_MAGIC):
        raise CorpusError(f"{path}: not a visual feature sidecar")
    pos = len(_SIDECAR_MAGIC)
    while pos < len(data):
        (hlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        header = json.loads(data[pos : pos + hlen].decode("utf-8"))
        pos += hlen
        n, d_raw, d2 = header["n_V"], header["d_raw"], header["d_2D"]
        ts = np.frombuffer(data, dtype="<f4", count=n, offset=pos).astype(np.float32)
        pos += 4 * n
        feats = np.frombuffer(data, dtype="<f4", count=n * d_raw, offset=pos).astype(np.float32)
        pos += 4 * n * d_raw
        feats = feats.reshape(n, d_raw)
        out[header["episode_id"]] = RawVisualRecord(feats[:, :d2].copy(), feats[:, d2:].copy(), ts)
    return out


def save_corpus(path, episodes: Sequence[ClipEpisode]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for e in episodes:
            f.write(json.dumps(e.to_json(), sort_keys=True) + "\n")
    visuals = {e.id: e.visual for e in episodes if e.visual is not None}
    if visuals:
        write_sidecar(sidecar_path(path), visuals)


def load_corpus(path) -> List[ClipEpisode]:
    path = Path(path)
    side = sidecar_path(path)
    visuals = read_sidecar(side) if side.exists() else {}
    episodes = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            d = json.loads(line)
            ref = d.get("visual_features")
            if ref is not None and ref not in visuals:
                raise CorpusError(f"{d['id']}: visual features {ref!r} missing from sidecar")
            episodes.append(ClipEpisode.from_json(d, visuals.get(ref) if ref else None))
    return episodes


def select(episodes: Sequence[ClipEpisode], ids: Iterable[str]) -> List[ClipEpisode]:
    by_id = {e.id: e for e in episodes}
    return [by_id[i] for i in ids]
