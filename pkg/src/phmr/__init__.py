"""Personality-aware multimodal reasoning over synthetic clip corpora.

Modules: ``mbti`` (types and profiles), ``corpus`` (episodes, trisection,
splits, storage), ``synth`` (planted-signal generator), ``encoders``
(tokenizer and feature embedding), ``reasoner`` (the reasoning model),
``predictor`` (personality prediction), ``metrics`` and ``harness``/``cli``.
"""
from .mbti import MBTIType, PersonalityProfile, parse_mbti

__version__ = "0.1.0"

__all__ = ["MBTIType", "PersonalityProfile", "parse_mbti", "__version__"]
