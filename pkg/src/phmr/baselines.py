"""Rule baselines for the four-option task."""
from __future__ import annotations

from typing import List, Sequence

import numpy as np

from .corpus import ClipEpisode, make_rng

RULES = ("random", "longest", "shortest")


def option_lengths(episode: ClipEpisode) -> List[int]:
    return [len(o.split()) for o in episode.options]


def rule_baseline(kind: str, episodes: Sequence[ClipEpisode], seed: int = 0) -> np.ndarray:
    """Predicted option indices; longest/shortest break ties toward the lowest index."""
    if kind == "random":
        return make_rng(seed).integers(0, 4, size=len(episodes))
    if kind == "longest":
        return np.array([int(np.argmax(option_lengths(e))) for e in episodes], dtype=np.int64)
    if kind == "shortest":
        return np.array([int(np.argmin(option_lengths(e))) for e in episodes], dtype=np.int64)
    raise ValueError(f"unknown rule baseline {kind!r}; expected one of {RULES}")
