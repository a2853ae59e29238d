"""Shared builders and oracles for the test suite."""
from __future__ import annotations

import numpy as np
import torch

from phmr.corpus import Behavior, ClipEpisode, RawVisualRecord, TimeSpan, Utterance, trisect
from phmr.encoders import MAX_OWNERS
from phmr.mbti import PersonalityProfile, parse_mbti
from phmr.predictor import PredictorConfig

OPTIONS = ["Person1 a b", "Person1 c d e", "Person1 f", "Person1 g h i j"]


def make_episode(eid="ep0", utterances=(), behaviors=(), present=(10.0, 12.0), duration=30.0,
                 timestamps=None, profile=None, options=None, gold=0, target="Person1", d2=3, d3=2):
    profile = profile or PersonalityProfile({"Person1": parse_mbti("ESFP"), "Person2": parse_mbti("INTJ")})
    utts = [Utterance(s, t, TimeSpan(*span)) for s, t, span in utterances]
    behs = [Behavior(s, t, TimeSpan(*span)) for s, t, span in behaviors]
    visual = None
    if timestamps is not None:
        ts = np.asarray(timestamps, dtype=np.float32)
        rng = np.random.default_rng(0)
        visual = RawVisualRecord(rng.normal(size=(len(ts), d2)), rng.normal(size=(len(ts), d3)), ts)
    return ClipEpisode(eid, duration, utts, behs, profile, TimeSpan(*present), list(options or OPTIONS), gold,
                       target, visual)


def random_span(rng, duration, grid=0.5):
    a, b = sorted(rng.integers(0, int(duration / grid) + 1, size=2) * grid)
    return float(a), float(b)


def random_trisection_episode(rng, k=0):
    duration = 20.0
    present = random_span(rng, duration)
    utts = [("Person1", "u", random_span(rng, duration)) for _ in range(rng.integers(0, 8))]
    behs = [("Person2", "b", random_span(rng, duration)) for _ in range(rng.integers(0, 5))]
    ts = np.sort(rng.integers(0, 41, size=rng.integers(0, 12)) * 0.5)
    return make_episode(f"ep{k}", utts, behs, present, duration, ts)


def check_trisection(ep) -> None:
    """Independent restatement of the past/future/excluded rule; raises AssertionError on violation."""
    p = ep.present_span
    tri = trisect(ep)

    def side(start, end):
        if end <= p.start:
            return "past"
        if start >= p.end:
            return "future"
        return "excluded"

    for items, past, future in ((ep.utterances, tri.dialogue_past, tri.dialogue_future),
                                (ep.behaviors, tri.behavior_past, tri.behavior_future)):
        assert len(past) + len(future) <= len(items)
        for it in items:
            s = side(it.span.start, it.span.end)
            n_past = sum(x is it for x in past)
            n_future = sum(x is it for x in future)
            assert n_past + n_future == (s != "excluded")
            assert (n_past == 1) == (s == "past") and (n_future == 1) == (s == "future")
            if s != "excluded":
                assert not (it.span.start < p.end and it.span.end > p.start)
        pos = {id(x): i for i, x in enumerate(items)}
        assert [pos[id(x)] for x in past] == sorted(pos[id(x)] for x in past)
    if ep.visual is not None:
        past, future = set(tri.video_past), set(tri.video_future)
        assert not past & future
        for i, t in enumerate(ep.visual.timestamps.tolist()):
            s = side(t, t)
            assert (i in past) == (s == "past") and (i in future) == (s == "future")


# -- brute-force metric oracles (plain Python, no numpy ranking) -------------


def oracle_hamming(pred_bits, gold_bits):
    total = 0.0
    for p, g in zip(pred_bits, gold_bits):
        total += sum(1 for a, b in zip(p, g) if a != b) / 4
    return total / len(pred_bits)


def oracle_ranking_loss(scores, gold):
    total = 0.0
    for s, g in zip(scores, gold):
        rel = [j for j in range(len(s)) if g[j]]
        irr = [j for j in range(len(s)) if not g[j]]
        if not rel or not irr:
            continue
        bad = 0.0
        for r in rel:
            for i in irr:
                if s[r] < s[i]:
                    bad += 1
                elif s[r] == s[i]:
                    bad += 0.5
        total += bad / (len(rel) * len(irr))
    return total / len(scores)


def oracle_average_precision(scores, gold):
    """Rank of label j = 1 + #labels strictly ahead under (score desc, index asc)."""
    total = 0.0
    for s, g in zip(scores, gold):
        n = len(s)
        ahead = lambda a, b: s[a] > s[b] or (s[a] == s[b] and a < b)
        rel = [j for j in range(n) if g[j]]
        if not rel:
            total += 1.0
            continue
        acc = 0.0
        for j in rel:
            above = [k for k in range(n) if k == j or ahead(k, j)]
            acc += sum(1 for k in above if g[k]) / len(above)
        total += acc / len(rel)
    return total / len(scores)


def oracle_masi(a, b):
    a, b = frozenset(a), frozenset(b)
    if not a and not b:
        return 1.0
    common = [x for x in a if x in b]
    union = len(a) + len(b) - len(common)
    if len(common) == len(a) == len(b):
        m = 1.0
    elif len(common) == min(len(a), len(b)) and common:
        m = 2 / 3
    elif len(common) == 0:
        m = 0.0
    else:
        m = 1 / 3
    return len(common) / union * m


# -- word-frequency oracles over generated dialogue ---------------------------


def speaker_words(episodes):
    """Every utterance token, grouped by speaker, with the speaker's type."""
    words, types = {}, {}
    for e in episodes:
        for u in e.utterances:
            words.setdefault(u.speaker, []).extend(u.text.lower().split())
            types[u.speaker] = e.profile[u.speaker]
    return words, types


def naive_bayes_pole_accuracy(train_corpora, test_episodes, axis_index=0, alpha=1.0):
    """Multinomial naive Bayes on word counts, fit on the characters of independent
    training corpora, scored on every character of ``test_episodes``."""
    import math
    from collections import Counter

    counts = {0: Counter(), 1: Counter()}
    for eps in train_corpora:
        words, types = speaker_words(eps)
        for spk, ws in words.items():
            counts[types[spk].first_pole_bits()[axis_index]].update(ws)
    words, types = speaker_words(test_episodes)
    vocab = set(counts[0]) | set(counts[1]) | {w for ws in words.values() for w in ws}
    correct = 0
    for spk, ws in words.items():
        scores = {}
        for bit, c in counts.items():
            denom = sum(c.values()) + alpha * len(vocab)
            scores[bit] = sum(math.log((c[w] + alpha) / denom) for w in ws)
        correct += max(scores, key=scores.get) == types[spk].first_pole_bits()[axis_index]
    return correct / len(words)


def pole_word_mutual_information(episodes, axis_index=0):
    """Empirical I(pole; word) in nats over utterance tokens."""
    import math
    from collections import Counter

    joint = Counter()
    words, types = speaker_words(episodes)
    for spk, ws in words.items():
        bit = types[spk].first_pole_bits()[axis_index]
        for w in ws:
            joint[(bit, w)] += 1
    n = sum(joint.values())
    pb, pw = Counter(), Counter()
    for (b, w), c in joint.items():
        pb[b] += c
        pw[w] += c
    return sum(c / n * math.log(c * n / (pb[b] * pw[w])) for (b, w), c in joint.items())


# -- random model inputs -------------------------------------------------------


def random_bundle(rng, b=4, d=16, n_p=3, l_p=4, n_d=5, l_d=6, n_b=3, l_b=5, n_v=7, l_a=6, dtype=None):
    """A FeatureBundle with random values everywhere (pads included) and random masks.

    Masks are prefix masks per row; some rows get a fully masked modality.
    """
    import torch

    from phmr.encoders import FeatureBundle

    dtype = dtype or torch.float32

    def prefix_mask(shape, allow_empty=True):
        n = shape[-1]
        lo = 0 if allow_empty else 1
        lengths = rng.integers(lo, n + 1, size=shape[:-1])
        return torch.from_numpy(np.arange(n) < lengths[..., None])

    def block(*shape):
        return torch.from_numpy(rng.normal(size=shape + (d,))).to(dtype)

    return FeatureBundle(
        V=block(b, n_v), V_mask=prefix_mask((b, n_v)),
        D=block(b, n_d, l_d), D_mask=prefix_mask((b, n_d, l_d)),
        B=block(b, n_b, l_b), B_mask=prefix_mask((b, n_b, l_b)),
        A=block(b, 4, l_a), A_mask=prefix_mask((b, 4, l_a), allow_empty=False),
        P=block(b, n_p, l_p), P_mask=prefix_mask((b, n_p, l_p), allow_empty=False),
    )


def scramble_pads(bundle, rng):
    """Copy of ``bundle`` with fresh random values at every masked position."""
    import torch

    out = {}
    for name in ("V", "D", "B", "A", "P"):
        x, m = getattr(bundle, name), getattr(bundle, f"{name}_mask")
        noise = torch.from_numpy(rng.normal(scale=10.0, size=tuple(x.shape))).to(x.dtype)
        out[name] = torch.where(m.unsqueeze(-1), x, noise)
        out[f"{name}_mask"] = m
    return type(bundle)(**out)


def random_id_batch(rng, n_tokens, d_raw, b=3, n_d=3, l_d=5, n_b=2, l_b=4, n_p=2, l_p=3, l_a=4, n_v=4):
    """An IdBatch of random token ids with pad tails."""
    import torch

    from phmr.encoders import IdBatch

    def ids(*shape):
        x = rng.integers(2, n_tokens, size=shape)
        lengths = rng.integers(1, shape[-1] + 1, size=shape[:-1])
        x[np.arange(shape[-1]) >= lengths[..., None]] = 0
        return torch.from_numpy(x)

    def owners(*shape):
        return torch.from_numpy(rng.integers(0, MAX_OWNERS + 1, size=shape))

    def seg(*shape):
        return torch.from_numpy(rng.integers(0, 2, size=shape))

    v_mask = torch.from_numpy(np.arange(n_v) < rng.integers(1, n_v + 1, size=(b, 1)))
    return IdBatch(
        d_ids=ids(b, n_d, l_d), d_owner=owners(b, n_d), d_seg=seg(b, n_d),
        b_ids=ids(b, n_b, l_b), b_owner=owners(b, n_b), b_seg=seg(b, n_b),
        a_ids=ids(b, 4, l_a), a_owner=owners(b, 4),
        p_ids=ids(b, n_p, l_p), p_owner=owners(b, n_p),
        v_raw=torch.from_numpy(rng.normal(size=(b, n_v, d_raw)).astype(np.float32)),
        v_mask=v_mask, v_seg=seg(b, n_v),
        gold=torch.from_numpy(rng.integers(0, 4, size=b)),
    )


def gradient_check(model, loss_fn, rng, eps=1e-5, max_entries=None):
    """Central finite differences (float64) against autograd for every parameter tensor.

    Returns {parameter name: relative error}, where the error is
    ||g_analytic - g_numeric|| / max(||g_analytic|| + ||g_numeric||, 1e-6). The floor sits
    far above central-difference noise (~1e-10) and only matters for tensors whose gradient
    is identically zero, e.g. biases that shift all four option logits equally.
    """
    import torch

    model.double()
    model.zero_grad()
    loss_fn(model).backward()
    out = {}
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.view(-1)
            idx = np.arange(flat.numel())
            if max_entries is not None and idx.size > max_entries:
                idx = np.sort(rng.choice(idx, size=max_entries, replace=False))
            analytic = p.grad.view(-1)[idx].clone()
            numeric = torch.empty_like(analytic)
            for k, i in enumerate(idx):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = loss_fn(model).item()
                flat[i] = orig - eps
                down = loss_fn(model).item()
                flat[i] = orig
                numeric[k] = (up - down) / (2 * eps)
            denom = max((analytic.norm() + numeric.norm()).item(), 1e-6)
            out[name] = (analytic - numeric).norm().item() / denom
    return out


def prm_structural_suite(model, rng, n_bundles, batch=20, **shape):
    """Runs the reasoner's structural properties over ``n_bundles`` random bundles.

    Returns the worst observed deviation per property:
    ``softmax`` (|sum - 1|), ``permutation`` (count of inexact elements),
    ``pad`` (max abs change), ``ablation`` (count of inexact elements when P is
    re-drawn with use_P off) and ``fusion`` (max abs gap between fused logits
    and the sum of single-modality logits).
    """
    import torch

    from phmr.reasoner import ModalityMask

    model.eval()
    full = ModalityMask()
    no_p = ModalityMask(use_P=False)
    worst = dict(softmax=0.0, permutation=0, pad=0.0, ablation=0, fusion=0.0)
    done = 0
    with torch.no_grad():
        while done < n_bundles:
            b = min(batch, n_bundles - done)
            bundle = random_bundle(rng, b=b, **shape)
            probs = model(bundle, full)
            worst["softmax"] = max(worst["softmax"], (probs.sum(-1) - 1).abs().max().item())

            perm = torch.from_numpy(rng.permutation(4))
            permuted = bundle.map(lambda x: x)
            permuted.A, permuted.A_mask = bundle.A[:, perm], bundle.A_mask[:, perm]
            worst["permutation"] += int((model(permuted, full) != probs[:, perm]).sum())

            worst["pad"] = max(worst["pad"], (model(scramble_pads(bundle, rng), full) - probs).abs().max().item())

            base = model(bundle, no_p)
            other = bundle.map(lambda x: x)
            fresh = random_bundle(rng, b=b, n_p=int(rng.integers(1, 5)), l_p=int(rng.integers(1, 6)),
                                  d=bundle.A.shape[-1])
            other.P, other.P_mask = fresh.P, fresh.P_mask
            worst["ablation"] += int((model(other, no_p) != base).sum())

            fused = model.logits(bundle, full)
            parts = sum(model.logits(bundle, ModalityMask(m == "D", m == "V", m == "B", True)) for m in "DVB")
            worst["fusion"] = max(worst["fusion"], (fused - parts).abs().max().item())
            done += b
    return worst


class GoldOracle(torch.nn.Module):
    """Predictor stand-in that returns each character's annotated type."""

    def __init__(self, episodes, d_raw):
        super().__init__()
        self.cfg = PredictorConfig(n_tokens=2, d_raw=d_raw)
        self.types = {(e.id, t): e.profile[t] for e in episodes for t in e.profile}

    def batch_logits(self, batch):
        bits = [self.types[p].first_pole_bits() for p in batch.persons]
        return (torch.tensor(bits, dtype=torch.float32) * 2 - 1) * 30
