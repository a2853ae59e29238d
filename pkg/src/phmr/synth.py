"""Synthetic clip corpora with planted, controllable personality signal."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .corpus import Behavior, ClipEpisode, RawVisualRecord, TimeSpan, Utterance, make_rng
from .mbti import AXES, EIGHT_LABELS, Axis, MBTIType, PersonalityProfile, all_types

ANSWER_RULES = ("personality_dependent", "personality_independent", "longest_always")

SHARED_WORDS = (
    "the a to and you i it that is of what this we be just so on for my me with do not are "
    "was can all but here there now then they if at about one get go out no yes okay well "
    "right how why think see like want time mean come look good tell said thing"
).split()

# Dialogue habits per pole. Disjoint from each other and from SHARED_WORDS.
POLE_WORDS: Dict[str, Tuple[str, ...]] = {
    "E": tuple("really know guys party awesome everybody hey totally fun together tonight talk".split()),
    "I": tuple("have would alone quiet maybe perhaps book home prefer myself rather silence".split()),
    "S": tuple("actually fact exactly detail today practical real touch measure hands concrete specific".split()),
    "N": tuple("imagine possibly future theory idea dream pattern meaning universe wonder someday abstract".split()),
    "T": tuple("logic reason correct efficient analysis data wrong proof system objective calculate evidence".split()),
    "F": tuple("feel love sorry heart care hurt sweet kind hug happy worry friend".split()),
    "J": tuple("plan schedule decide rule order finish deadline ready organize list must sure".split()),
    "P": tuple("whatever later random spontaneous explore chill flexible anyway option wing improvise adventure".split()),
}

# Reaction vocabulary for answer options, one set per pole.
REACTION_WORDS: Dict[str, Tuple[str, ...]] = {
    "E": tuple("cheers joins laughs loudly crowd dances shouts greets".split()),
    "I": tuple("withdraws whispers leaves silently corner reads retreats nods".split()),
    "S": tuple("checks inspects counts carefully step measures fixes examines".split()),
    "N": tuple("daydreams speculates envisions wildly theorizes ponders invents sketches".split()),
    "T": tuple("argues corrects debates coldly explains critiques evaluates lectures".split()),
    "F": tuple("comforts apologizes cries warmly hugs consoles sympathizes smiles".split()),
    "J": tuple("arranges schedules insists promptly organizes finalizes prepares tidies".split()),
    "P": tuple("improvises wanders postpones casually shrugs procrastinates jokes skips".split()),
}

DISTRACTOR_WORDS = tuple(
    "walks sits opens door eats sandwich drinks coffee stands window turns phone picks bag car table".split()
)

EVENT_WORDS: Tuple[Tuple[str, ...], ...] = (
    tuple("kitchen cooks dinner stove pasta plate".split()),
    tuple("couch game controller screen score level".split()),
    tuple("lab experiment laser board equation chalk".split()),
    tuple("stairs elevator broken climbs floor apartment".split()),
    tuple("restaurant menu waiter orders bill tip".split()),
    tuple("comic store shelf issue collector price".split()),
)


def _zipf(n: int) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1)
    return w / w.sum()


def default_vocab() -> Dict[str, Dict[str, float]]:
    vocab = {pole: dict(zip(words, _zipf(len(words)).tolist())) for pole, words in POLE_WORDS.items()}
    vocab["shared"] = dict(zip(SHARED_WORDS, _zipf(len(SHARED_WORDS)).tolist()))
    return vocab


@dataclass
class GeneratorConfig:
    n_episodes: int = 1000
    cast_size: int = 8
    personality_signal_strength: float = 0.8
    answer_rule: str = "personality_dependent"
    length_bias: float = 0.0
    seed: int = 0
    vocab: Dict[str, Dict[str, float]] = field(default_factory=default_vocab)
    mean_duration: float = 30.0
    mean_utterances: float = 8.0
    mean_behaviors: float = 4.0
    max_extra_characters: int = 2
    target_share: float = 0.5
    utterance_length: Tuple[int, int] = (4, 8)
    behavior_length: Tuple[int, int] = (3, 7)
    option_length: Tuple[int, int] = (3, 8)
    fps: float = 0.5
    d_2d: int = 16
    d_3d: int = 8
    visual_separation: float = 0.5
    id_prefix: str = "clip"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.answer_rule not in ANSWER_RULES:
            raise ValueError(f"unknown answer rule {self.answer_rule!r}")
        if not 0.0 <= self.personality_signal_strength <= 1.0:
            raise ValueError("personality_signal_strength must lie in [0, 1]")
        if not 0.0 <= self.length_bias <= 1.0:
            raise ValueError("length_bias must lie in [0, 1]")
        if self.cast_size < 1 or self.n_episodes < 1:
            raise ValueError("cast_size and n_episodes must be positive")
        lo, hi = self.option_length
        if hi - lo + 1 < 4 or lo < 2:
            raise ValueError("option_length range must allow 4 distinct lengths of at least 2 tokens")
        missing = set(EIGHT_LABELS) | {"shared"}
        missing -= set(self.vocab)
        if missing:
            raise ValueError(f"vocab lacks distributions for {sorted(missing)}")
        for key, dist in self.vocab.items():
            total = sum(dist.values())
            if not dist or abs(total - 1.0) > 1e-6 or min(dist.values()) < 0:
                raise ValueError(f"vocab distribution {key!r} is not normalized")

    def to_json(self) -> dict:
        d = asdict(self)
        for k in ("utterance_length", "behavior_length", "option_length"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> "GeneratorConfig":
        d = dict(d)
        for k in ("utterance_length", "behavior_length", "option_length"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def word_distribution(cfg: GeneratorConfig, t: MBTIType) -> Dict[str, float]:
    """Exact unigram distribution of an utterance word spoken by a character of type ``t``."""
    s = cfg.personality_signal_strength
    out: Dict[str, float] = {}
    for w, p in cfg.vocab["shared"].items():
        out[w] = out.get(w, 0.0) + (1 - s) * p
    for pole in t.poles:
        for w, p in cfg.vocab[pole].items():
            out[w] = out.get(w, 0.0) + s * p / 4
    return out


def expected_statistics(cfg: GeneratorConfig) -> Dict[str, float]:
    """Population means implied by the configuration (for corpus_statistics checks)."""
    ulo, uhi = cfg.utterance_length
    blo, bhi = cfg.behavior_length
    olo, ohi = cfg.option_length
    return {
        "avg_seconds": cfg.mean_duration,
        "avg_utterances": cfg.mean_utterances,
        "avg_behaviors": cfg.mean_behaviors,
        "avg_personalities": 1 + cfg.max_extra_characters / 2,
        "avg_utterance_length": (ulo + uhi) / 2,
        "avg_behavior_length": 1 + (blo + bhi) / 2,
        "avg_option_length": (olo + ohi) / 2,
    }


@dataclass
class GoldTrace:
    """Latent choices behind every gold index, keyed by episode id."""

    records: Dict[str, dict] = field(default_factory=dict)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.records, sort_keys=True, indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "GoldTrace":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def __getitem__(self, eid: str) -> dict:
        return self.records[eid]


class GoldMismatch(ValueError):
    pass


def cast_tags(n: int) -> List[str]:
    return [f"Person{i}" for i in range(1, n + 1)]


def _opposite(pole: str) -> str:
    for axis in AXES:
        if pole in axis.poles:
            a, b = axis.poles
            return b if pole == a else a
    raise ValueError(pole)


class _Sampler:
    def __init__(self, cfg: GeneratorConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.words = {k: list(d.keys()) for k, d in cfg.vocab.items()}
        self.probs = {k: np.asarray(list(d.values()), dtype=np.float64) for k, d in cfg.vocab.items()}

    def word(self, key: str) -> str:
        ws = self.words[key]
        return ws[int(self.rng.choice(len(ws), p=self.probs[key]))]

    def utterance(self, t: MBTIType) -> str:
        lo, hi = self.cfg.utterance_length
        n = int(self.rng.integers(lo, hi + 1))
        s = self.cfg.personality_signal_strength
        out = []
        for _ in range(n):
            if self.rng.random() < s:
                out.append(self.word(t.poles[int(self.rng.integers(4))]))
            else:
                out.append(self.word("shared"))
        return " ".join(out)

    def pick(self, pool: Sequence[str], n: int) -> List[str]:
        idx = list(self.rng.permutation(len(pool))[:n])
        if n > len(pool):
            idx += list(self.rng.integers(len(pool), size=n - len(pool)))
        return [pool[int(i)] for i in idx]


def _count(rng: np.random.Generator, mean: float) -> int:
    return 1 + int(rng.poisson(max(mean - 1.0, 0.0)))


def _random_span(rng, duration: float, lo: float = 1.0, hi: float = 3.0) -> TimeSpan:
    length = float(rng.uniform(lo, hi))
    start = float(rng.uniform(0.0, max(duration - length, 0.0)))
    return TimeSpan(round(start, 3), round(min(start + length, duration), 3))


def generate_corpus(cfg: GeneratorConfig) -> Tuple[List[ClipEpisode], GoldTrace]:
    cfg.validate()
    rng = make_rng(cfg.seed)
    sampler = _Sampler(cfg, rng)
    types = all_types()
    tags = cast_tags(cfg.cast_size)
    cast = PersonalityProfile((tag, types[int(rng.integers(len(types)))]) for tag in tags)

    d_raw = cfg.d_2d + cfg.d_3d
    pole_centroids = {p: rng.normal(size=d_raw) for p in EIGHT_LABELS}
    event_centroids = rng.normal(size=(len(EVENT_WORDS), d_raw))

    episodes: List[ClipEpisode] = []
    trace = GoldTrace()
    width = len(str(cfg.n_episodes - 1))
    for k in range(cfg.n_episodes):
        eid = f"{cfg.id_prefix}{k:0{width}d}"
        duration = round(float(rng.uniform(cfg.mean_duration - 10, cfg.mean_duration + 10)), 3)
        n_chars = 1 + int(rng.integers(cfg.max_extra_characters + 1))
        members = [tags[int(i)] for i in rng.choice(len(tags), size=min(n_chars, len(tags)), replace=False)]
        target = members[0]
        others = members[1:]
        event = int(rng.integers(len(EVENT_WORDS)))

        center = float(rng.uniform(0.35, 0.65)) * duration
        half = float(rng.uniform(0.75, 1.5))
        present = TimeSpan(round(center - half, 3), round(center + half, 3))

        utterances = []
        for _ in range(_count(rng, cfg.mean_utterances)):
            if not others or rng.random() < cfg.target_share:
                speaker = target
            else:
                speaker = others[int(rng.integers(len(others)))]
            utterances.append(Utterance(speaker, sampler.utterance(cast[speaker]), _random_span(rng, duration)))
        utterances.sort(key=lambda u: (u.span.start, u.span.end))

        behaviors = []
        blo, bhi = cfg.behavior_length
        for _ in range(_count(rng, cfg.mean_behaviors)):
            subject = members[int(rng.integers(len(members)))]
            n = int(rng.integers(blo, bhi + 1))
            words = sampler.pick(EVENT_WORDS[event] + DISTRACTOR_WORDS[:6], n)
            behaviors.append(Behavior(subject, " ".join([subject] + words), _random_span(rng, duration)))
        behaviors.sort(key=lambda b: (b.span.start, b.span.end))

        options, roles, poles, events, gold = _make_options(cfg, sampler, cast, target, event)

        n_frames = max(int(duration * cfg.fps), 1)
        timestamps = (np.arange(n_frames) + 0.5) / cfg.fps
        shown = [members[int(i)] for i in rng.integers(len(members), size=n_frames)]
        means = np.stack(
            [
                cfg.visual_separation * sum(pole_centroids[p] for p in cast[who].poles) / 2.0
                + event_centroids[event]
                for who in shown
            ]
        )
        feats = (means + rng.normal(size=(n_frames, d_raw))).astype(np.float32)
        visual = RawVisualRecord(feats[:, : cfg.d_2d], feats[:, cfg.d_2d :], timestamps.astype(np.float32))

        ep = ClipEpisode(
            id=eid,
            duration=duration,
            utterances=utterances,
            behaviors=behaviors,
            profile=cast.restrict(members),
            present_span=present,
            options=options,
            gold=gold,
            target_person=target,
            visual=visual,
        )
        episodes.append(ep)
        trace.records[eid] = {
            "rule": cfg.answer_rule,
            "target": target,
            "axis": roles["axis"],
            "target_pole": roles["target_pole"],
            "event": event,
            "option_roles": roles["roles"],
            "option_poles": poles,
            "option_events": events,
            "options": list(options),
            "shown": shown,
        }
    return episodes, trace


def _sized(words: List[str], n: int) -> str:
    return " ".join(words[:n])


def _make_options(cfg, sampler: _Sampler, cast, target, event):
    rng = sampler.rng
    lo, hi = cfg.option_length
    axis = AXES[int(rng.integers(4))]
    tpole = cast[target].pole(axis)
    info = {"axis": axis.value, "target_pole": tpole}

    if cfg.answer_rule == "personality_independent":
        other_events = [e for e in range(len(EVENT_WORDS)) if e != event]
        ev = [event] + [other_events[int(i)] for i in rng.choice(len(other_events), 3, replace=False)]
        contents = [sampler.pick(EVENT_WORDS[e], hi + 1) for e in ev]
        role_list = ["event", "other_event", "other_event", "other_event"]
        pole_list: List[Optional[str]] = [None] * 4
        event_list: List[Optional[int]] = ev
    else:
        contents = [
            sampler.pick(REACTION_WORDS[tpole], hi + 1),
            sampler.pick(REACTION_WORDS[_opposite(tpole)], hi + 1),
            sampler.pick(DISTRACTOR_WORDS, hi + 1),
            sampler.pick(DISTRACTOR_WORDS, hi + 1),
        ]
        role_list = ["consistent", "opposite", "distractor", "distractor"]
        pole_list = [tpole, _opposite(tpole), None, None]
        event_list = [None] * 4

    if cfg.answer_rule == "longest_always":
        lengths = [int(x) for x in rng.choice(np.arange(lo, hi + 1), size=4, replace=False)]
        lengths.sort(reverse=True)  # role 0 gets the longest
    else:
        lengths = [int(x) for x in rng.integers(lo, hi + 1, size=4)]
        if cfg.length_bias > 0 and rng.random() < cfg.length_bias:
            lengths[0] = max(lengths[1:]) + 1

    texts = [" ".join([target] + c[: n - 1]) for c, n in zip(contents, lengths)]
    order = [int(i) for i in rng.permutation(4)]
    options = [texts[i] for i in order]
    roles = [role_list[i] for i in order]
    poles = [pole_list[i] for i in order]
    events = [event_list[i] for i in order]
    gold = order.index(0)
    info["roles"] = roles
    return options, info, poles, events, gold


def _whitespace_len(text: str) -> int:
    return len(text.split())


def regenerate_gold(episode: ClipEpisode, trace: GoldTrace | dict) -> int:
    """Recompute the gold index from the latent rule stored in ``trace``."""
    rec = trace if isinstance(trace, dict) and "rule" in trace else None
    if rec is None:
        try:
            rec = trace[episode.id]
        except KeyError:
            raise GoldMismatch(f"no trace record for episode {episode.id!r}") from None
    if list(episode.options) != list(rec["options"]):
        raise GoldMismatch(f"{episode.id}: options differ from the generation trace")
    rule = rec["rule"]
    if rule == "longest_always":
        lengths = [_whitespace_len(o) for o in episode.options]
        return int(np.argmax(lengths))
    if rule == "personality_independent":
        return rec["option_events"].index(rec["event"])
    pole = episode.profile[rec["target"]].pole(Axis(rec["axis"]))
    for i, (role, p) in enumerate(zip(rec["option_roles"], rec["option_poles"])):
        if role in ("consistent", "opposite") and p == pole:
            return i
    raise GoldMismatch(f"{episode.id}: no option matches the target pole {pole}")


def cast_profile(episodes: Sequence[ClipEpisode]) -> PersonalityProfile:
    """Union of every clip profile in a corpus."""
    merged: Dict[str, MBTIType] = {}
    for e in episodes:
        for tag, t in e.profile.items():
            if merged.setdefault(tag, t) != t:
                raise ValueError(f"{tag} has conflicting types across clips")
    return PersonalityProfile(sorted(merged.items()))
