import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import check_trisection, make_episode, random_trisection_episode
from phmr.corpus import (
    SCHEMA,
    CorpusError,
    CorpusSplit,
    RawVisualRecord,
    TimeSpan,
    build_mpp_split,
    corpus_statistics,
    load_corpus,
    make_rng,
    read_sidecar,
    save_corpus,
    sidecar_path,
    split_corpus,
    trisect,
)
from phmr.synth import GeneratorConfig, generate_corpus


def test_trisect_examples():
    ep = make_episode(
        utterances=[("Person1", "before", (3, 5)), ("Person1", "touch", (12, 14)), ("Person2", "inside", (9, 11))],
        behaviors=[("Person2", "Person2 sits", (11, 11.5)), ("Person1", "Person1 waves", (8, 10))],
        timestamps=[9.0, 10.0, 11.0, 12.0, 13.0],
    )
    tri = trisect(ep)
    assert [u.text for u in tri.dialogue_past] == ["before"]
    assert [u.text for u in tri.dialogue_future] == ["touch"]
    assert tri.behavior_future == [] and [b.text for b in tri.behavior_past] == ["Person1 waves"]
    assert list(tri.video_past) == [0, 1] and list(tri.video_future) == [3, 4]


def test_trisect_zero_length_present_goes_past_first():
    ep = make_episode(utterances=[("Person1", "point", (5, 5))], present=(5, 5), timestamps=[5.0])
    tri = trisect(ep)
    assert len(tri.dialogue_past) == 1 and not tri.dialogue_future
    assert list(tri.video_past) == [0] and not list(tri.video_future)


def test_trisect_empty_partitions_legal():
    tri = trisect(make_episode())
    assert tri.dialogue_past == [] and tri.video_past == range(0)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_trisection_property(seed):
    check_trisection(random_trisection_episode(np.random.default_rng(seed)))


def test_timespan_validation():
    with pytest.raises(CorpusError):
        TimeSpan(3, 2)
    with pytest.raises(CorpusError):
        TimeSpan(-1, 2)


def test_episode_validation():
    with pytest.raises(CorpusError):
        make_episode(options=["a", "b", "c"])
    with pytest.raises(CorpusError):
        make_episode(gold=4)
    with pytest.raises(CorpusError):
        make_episode(target="Nobody")
    with pytest.raises(CorpusError):
        make_episode(behaviors=[("Person1", "does he?", (1, 2))])


def test_visual_record_validation():
    with pytest.raises(CorpusError):
        RawVisualRecord(np.zeros((3, 2)), np.zeros((2, 2)), np.zeros(3))
    with pytest.raises(CorpusError):
        RawVisualRecord(np.zeros((2, 2)), np.zeros((2, 2)), np.array([1.0, 0.5]))


def _eps(n):
    return [make_episode(f"e{i:03d}") for i in range(n)]


def test_split_sizes_and_determinism():
    s = split_corpus(_eps(100), seed=3)
    assert (len(s.train), len(s.validation), len(s.test)) == (60, 20, 20)
    s5 = split_corpus(_eps(5))
    assert (len(s5.train), len(s5.validation), len(s5.test)) == (3, 1, 1)
    assert split_corpus(_eps(100), seed=3) == s
    assert split_corpus(_eps(100), seed=4) != s
    assert set(s.train) | set(s.validation) | set(s.test) == {f"e{i:03d}" for i in range(100)}
    with pytest.raises(CorpusError):
        split_corpus(_eps(4))


@pytest.mark.parametrize("n", range(5, 40))
def test_split_within_one_of_exact(n):
    s = split_corpus(_eps(n))
    for size, frac in zip((len(s.train), len(s.validation), len(s.test)), (0.6, 0.2, 0.2)):
        assert abs(size - n * frac) <= 1
    assert len(s.train) + len(s.validation) + len(s.test) == n


def test_split_rejects_overlap():
    with pytest.raises(CorpusError):
        CorpusSplit(("a",), ("a",), ())


def test_mpp_split():
    eps = _eps(130)
    phmrd = [e.id for e in eps[:30]]
    for seed in (0, 1):
        s = build_mpp_split(eps, phmrd, seed)
        assert (len(s.train), len(s.validation)) == (80, 20)
        assert s.test == tuple(phmrd)
        assert not set(s.train) & set(s.test)
    with pytest.raises(CorpusError):
        build_mpp_split(eps[:30], phmrd)
    with pytest.raises(CorpusError):
        build_mpp_split(eps, ["missing"])


def test_statistics():
    ep = make_episode(behaviors=[("Person1", "Person1 a b", (1, 2)), ("Person1", "Person1 c", (2, 3))],
                      utterances=[("Person1", "x y z w", (1, 2))])
    st_ = corpus_statistics([ep])
    assert (st_.avg_seconds, st_.avg_behaviors, st_.avg_utterances, st_.avg_personalities) == (30, 2, 1, 2)
    assert st_.avg_option_length == 3.5 and st_.avg_behavior_length == 2.5 and st_.avg_utterance_length == 4
    doubled = corpus_statistics([ep, ep])
    assert doubled.to_dict() | {"n_episodes": 1} == st_.to_dict()
    with pytest.raises(CorpusError):
        corpus_statistics([])


def test_make_rng_is_pcg64():
    assert isinstance(make_rng(0).bit_generator, np.random.PCG64)
    assert make_rng(7).integers(1 << 30) == make_rng(7).integers(1 << 30)


def test_save_load_round_trip(tmp_path):
    eps, _ = generate_corpus(GeneratorConfig(n_episodes=12, seed=5))
    path = tmp_path / "c.jsonl"
    save_corpus(path, eps)
    assert load_corpus(path) == eps
    lines = path.read_text().splitlines()
    assert len(lines) == 12 and all(json.loads(l)["schema"] == SCHEMA for l in lines)
    side = read_sidecar(sidecar_path(path))
    assert side[eps[0].id] == eps[0].visual
    raw = sidecar_path(path).read_bytes()
    assert raw[:8] == b"PHMRVIS1"


def test_load_rejects_unknown_schema(tmp_path):
    ep = make_episode()
    d = ep.to_json()
    d["schema"] = "phmr-0"
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(d) + "\n")
    with pytest.raises(CorpusError):
        load_corpus(path)
