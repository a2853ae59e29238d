"""Corpus analysis reports: statistics tables and per-pole word frequencies."""
from __future__ import annotations

from collections import Counter
from typing import Dict, List, Optional, Sequence, Tuple

from .corpus import ClipEpisode, corpus_statistics
from .encoders import pre_tokenize
from .mbti import AXES, Axis

TOP_K = 50


def word_frequency_report(episodes: Sequence[ClipEpisode], axis: Axis | str, top_k: int = TOP_K):
    """Top words per pole of ``axis``, pooling each speaker's utterances by their pole.

    Text is lowercased only; stop words are kept. Returns ``(lists, cloud)``
    where ``lists`` maps each pole to ``[(token, count), ...]`` and ``cloud`` is
    a list of ``{"token", "count", "pole"}`` records.
    """
    axis = Axis(axis)
    counts = {p: Counter() for p in axis.poles}
    speakers = {p: set() for p in axis.poles}
    for e in episodes:
        for u in e.utterances:
            t = e.profile.get(u.speaker)
            if t is None:
                continue
            pole = t.pole(axis)
            speakers[pole].add(u.speaker)
            counts[pole].update(pre_tokenize(u.text))
    empty = [p for p in axis.poles if not speakers[p]]
    if empty:
        raise ValueError(f"no speakers on pole(s) {empty} of axis {axis.value}")
    lists = {
        p: sorted(c.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k] for p, c in counts.items()
    }
    cloud = [{"token": tok, "count": n, "pole": p} for p in axis.poles for tok, n in lists[p]]
    return lists, cloud


def pole_percentages(episodes: Sequence[ClipEpisode]) -> Dict[str, Dict[str, float]]:
    """Share of each pole over all (clip, character) annotations, in percent."""
    out: Dict[str, Dict[str, float]] = {}
    pairs = [t for e in episodes for t in e.profile.values()]
    for axis in AXES:
        a, b = axis.poles
        n_a = sum(1 for t in pairs if t.pole(axis) == a)
        total = len(pairs)
        pa = 100.0 * n_a / total if total else 0.0
        out[axis.value] = {a: pa, b: 100.0 - pa if total else 0.0}
    return out


_ROWS = (
    ("avg_seconds", "Avg. seconds of clips"),
    ("avg_behaviors", "Avg. behavior descriptions"),
    ("avg_utterances", "Avg. utterances"),
    ("avg_personalities", "Avg. related personalities"),
    ("avg_option_length", "Avg. option length"),
    ("avg_behavior_length", "Avg. behavior length"),
    ("avg_utterance_length", "Avg. utterance length"),
)


def stats_report(corpora: Dict[str, Sequence[ClipEpisode]]) -> Tuple[str, dict]:
    """Markdown statistics table plus the same numbers as a dict, one column per corpus."""
    data = {}
    for name, eps in corpora.items():
        stats = corpus_statistics(eps).to_dict()
        data[name] = {"statistics": stats, "poles": pole_percentages(eps)}
    names = list(corpora)
    lines = ["| Statistic | " + " | ".join(names) + " |", "|---" * (len(names) + 1) + "|"]
    lines.append("| Clips | " + " | ".join(str(data[n]["statistics"]["n_episodes"]) for n in names) + " |")
    for key, label in _ROWS:
        lines.append(f"| {label} | " + " | ".join(f"{data[n]['statistics'][key]:.2f}" for n in names) + " |")
    for axis in AXES:
        a, b = axis.poles
        cells = [f"{data[n]['poles'][axis.value][a]:.2f}% / {data[n]['poles'][axis.value][b]:.2f}%" for n in names]
        lines.append(f"| {a} / {b} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n", data
