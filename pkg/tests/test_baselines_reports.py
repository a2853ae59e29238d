import numpy as np
import pytest

from helpers import make_episode
from phmr.baselines import rule_baseline
from phmr.mbti import PersonalityProfile, parse_mbti
from phmr.metrics import accuracy
from phmr.reports import pole_percentages, stats_report, word_frequency_report
from phmr.synth import POLE_WORDS, GeneratorConfig, expected_statistics, generate_corpus


def test_longest_shortest_ties_lowest_index():
    ep = make_episode(options=["Person1 a b", "Person1 c d", "Person1 e", "Person1 f"])
    assert rule_baseline("longest", [ep]).tolist() == [0]
    assert rule_baseline("shortest", [ep]).tolist() == [2]


def test_random_uses_seed():
    eps = [make_episode(f"e{i}") for i in range(50)]
    a = rule_baseline("random", eps, seed=3)
    assert np.array_equal(a, rule_baseline("random", eps, seed=3))
    assert not np.array_equal(a, rule_baseline("random", eps, seed=4))
    assert set(a.tolist()) <= {0, 1, 2, 3}
    with pytest.raises(ValueError):
        rule_baseline("middle", eps)


def test_baselines_on_longest_always_corpus():
    eps, _ = generate_corpus(GeneratorConfig(n_episodes=400, answer_rule="longest_always", seed=1))
    gold = [e.gold for e in eps]
    assert accuracy(rule_baseline("longest", eps), gold) == 1.0
    assert accuracy(rule_baseline("shortest", eps), gold) == 0.0


def test_length_bias_makes_longest_win():
    eps, _ = generate_corpus(GeneratorConfig(n_episodes=300, length_bias=1.0, seed=2))
    assert accuracy(rule_baseline("longest", eps), [e.gold for e in eps]) == 1.0


def test_word_frequency_trivial():
    profile = PersonalityProfile({"Person1": parse_mbti("ESFP"), "Person2": parse_mbti("INTJ")})
    ep = make_episode(utterances=[("Person1", "really really", (1, 2)), ("Person2", "hmm", (3, 4))], profile=profile)
    lists, cloud = word_frequency_report([ep], "EI")
    assert lists["E"] == [("really", 2)] and lists["I"] == [("hmm", 1)]
    assert {"token": "really", "count": 2, "pole": "E"} in cloud


def test_word_frequency_needs_both_poles():
    profile = PersonalityProfile({"Person1": parse_mbti("ESFP"), "Person2": parse_mbti("ENTJ")})
    ep = make_episode(utterances=[("Person1", "x", (1, 2))], profile=profile)
    with pytest.raises(ValueError):
        word_frequency_report([ep], "EI")


def test_word_frequency_lists_capped():
    eps, _ = generate_corpus(GeneratorConfig(n_episodes=200, seed=0))
    lists, _ = word_frequency_report(eps, "TF")
    assert all(len(v) <= 50 for v in lists.values())


def test_planted_marker_word_small():
    eps, _ = generate_corpus(GeneratorConfig(n_episodes=300, personality_signal_strength=0.9, seed=5))
    lists, _ = word_frequency_report(eps, "EI")
    marker = POLE_WORDS["E"][0]
    assert marker in [t for t, _ in lists["E"][:5]]
    assert marker not in [t for t, _ in lists["I"]]


def test_pole_percentages():
    profile = PersonalityProfile({"Person1": parse_mbti("ESFP")})
    ep = make_episode(profile=profile, options=["Person1 a"] * 4)
    pct = pole_percentages([ep, ep])
    assert pct["EI"] == {"E": 100.0, "I": 0.0}
    eps, _ = generate_corpus(GeneratorConfig(n_episodes=100))
    for axis, d in pole_percentages(eps).items():
        assert sum(d.values()) == pytest.approx(100.0)


def test_stats_report_matches_generator():
    cfg = GeneratorConfig(n_episodes=1500, seed=3)
    eps, _ = generate_corpus(cfg)
    md, data = stats_report({"reasoning": eps[:1000], "personality": eps})
    assert "| Avg. utterances |" in md and "| E / I |" in md
    for k, v in expected_statistics(cfg).items():
        assert data["personality"]["statistics"][k] == pytest.approx(v, rel=0.05)
