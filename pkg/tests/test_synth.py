import json

import numpy as np
import pytest

from helpers import naive_bayes_pole_accuracy, pole_word_mutual_information
from phmr.corpus import corpus_statistics, save_corpus, sidecar_path
from phmr.mbti import all_types
from phmr.synth import (
    POLE_WORDS,
    REACTION_WORDS,
    SHARED_WORDS,
    GeneratorConfig,
    GoldMismatch,
    GoldTrace,
    cast_profile,
    expected_statistics,
    generate_corpus,
    regenerate_gold,
    word_distribution,
)


def test_word_lists_disjoint():
    pools = [set(SHARED_WORDS)] + [set(v) for v in POLE_WORDS.values()]
    assert sum(len(p) for p in pools) == len(set().union(*pools))
    reactions = [set(v) for v in REACTION_WORDS.values()]
    assert sum(len(p) for p in reactions) == len(set().union(*reactions))


def test_config_validation():
    with pytest.raises(ValueError):
        GeneratorConfig(answer_rule="nope")
    with pytest.raises(ValueError):
        GeneratorConfig(personality_signal_strength=1.5)
    bad = GeneratorConfig().vocab
    bad["E"] = {"x": 0.5}
    with pytest.raises(ValueError):
        GeneratorConfig(vocab=bad)
    cfg = GeneratorConfig(n_episodes=3)
    assert GeneratorConfig.from_json(json.loads(json.dumps(cfg.to_json()))) == cfg


def test_distributions_normalized():
    cfg = GeneratorConfig()
    for key, dist in cfg.vocab.items():
        assert sum(dist.values()) == pytest.approx(1.0)
    for t in all_types():
        assert sum(word_distribution(cfg, t).values()) == pytest.approx(1.0)


def test_zero_signal_pole_distributions_identical():
    cfg = GeneratorConfig(personality_signal_strength=0.0)
    ref = word_distribution(cfg, all_types()[0])
    for t in all_types()[1:]:
        d = word_distribution(cfg, t)
        assert {w: p for w, p in d.items() if p} == {w: p for w, p in ref.items() if p}
    eps, _ = generate_corpus(GeneratorConfig(n_episodes=50, personality_signal_strength=0.0))
    used = {w for e in eps for u in e.utterances for w in u.text.split()}
    assert used <= set(SHARED_WORDS)


def test_longest_always_gold_is_longest():
    eps, trace = generate_corpus(GeneratorConfig(n_episodes=300, answer_rule="longest_always", seed=2))
    for e in eps:
        lengths = [len(o.split()) for o in e.options]
        assert e.gold == int(np.argmax(lengths)) and lengths.count(max(lengths)) == 1
        assert regenerate_gold(e, trace) == e.gold


@pytest.mark.parametrize("rule", ["personality_dependent", "personality_independent", "longest_always"])
def test_regenerate_gold_all_rules(rule):
    eps, trace = generate_corpus(GeneratorConfig(n_episodes=200, answer_rule=rule, seed=9))
    for e in eps:
        assert regenerate_gold(e, trace) == e.gold


def test_personality_dependent_gold_matches_target_pole():
    eps, trace = generate_corpus(GeneratorConfig(n_episodes=200, seed=4))
    for e in eps:
        rec = trace[e.id]
        words = set(e.options[e.gold].split()[1:])
        assert words <= set(REACTION_WORDS[rec["target_pole"]])
        assert e.options[e.gold].split()[0] == e.target_person


def test_regenerate_gold_detects_tampering():
    eps, trace = generate_corpus(GeneratorConfig(n_episodes=5, seed=1))
    e = eps[0]
    e.options = [e.options[1], e.options[0]] + e.options[2:]
    with pytest.raises(GoldMismatch):
        regenerate_gold(e, trace)
    with pytest.raises(GoldMismatch):
        regenerate_gold(eps[1], GoldTrace({}))


def test_replay_is_byte_identical(tmp_path):
    cfg = GeneratorConfig(n_episodes=40, seed=11)
    for name in ("a", "b"):
        eps, trace = generate_corpus(cfg)
        save_corpus(tmp_path / f"{name}.jsonl", eps)
        trace.save(tmp_path / f"{name}.trace.json")
    for suffix in (".jsonl", ".trace.json"):
        assert (tmp_path / f"a{suffix}").read_bytes() == (tmp_path / f"b{suffix}").read_bytes()
    assert sidecar_path(tmp_path / "a.jsonl").read_bytes() == sidecar_path(tmp_path / "b.jsonl").read_bytes()
    assert GoldTrace.load(tmp_path / "a.trace.json").records == trace.records


def test_statistics_match_configuration():
    cfg = GeneratorConfig(n_episodes=2000, seed=0)
    eps, _ = generate_corpus(cfg)
    got = corpus_statistics(eps).to_dict()
    for k, v in expected_statistics(cfg).items():
        assert got[k] == pytest.approx(v, rel=0.05), k


def test_characters_keep_one_type():
    eps, _ = generate_corpus(GeneratorConfig(n_episodes=300, cast_size=10))
    prof = cast_profile(eps)
    assert len(prof) <= 10


def test_visual_shapes():
    cfg = GeneratorConfig(n_episodes=10, d_2d=5, d_3d=3)
    eps, _ = generate_corpus(cfg)
    for e in eps:
        assert e.visual.v2d.shape[1] == 5 and e.visual.v3d.shape[1] == 3
        assert np.all(np.diff(e.visual.timestamps) >= 0)


def test_naive_bayes_oracle_recovers_ei_pole():
    """Signal 0.8, cast 8, 2000 episodes: a classifier fit on independent casts recovers E/I >= 90%."""
    cfg = dict(n_episodes=2000, cast_size=8, personality_signal_strength=0.8)
    train = [generate_corpus(GeneratorConfig(seed=100 + s, **cfg))[0] for s in range(4)]
    for seed in range(3):
        test, _ = generate_corpus(GeneratorConfig(seed=seed, **cfg))
        assert naive_bayes_pole_accuracy(train, test) >= 0.9


def test_mutual_information_monotone_in_signal():
    mi = [
        pole_word_mutual_information(generate_corpus(GeneratorConfig(
            n_episodes=400, cast_size=16, personality_signal_strength=s, seed=3))[0])
        for s in (0.0, 0.4, 0.8)
    ]
    assert mi[0] <= mi[1] <= mi[2]
