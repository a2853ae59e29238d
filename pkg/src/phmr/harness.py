"""Training loop, multi-seed orchestration, ablations and the two-stage pipeline."""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch

from .config import ExperimentConfig, TrainConfig
from .corpus import ClipEpisode, CorpusSplit, build_mpp_split, make_rng, select, split_corpus
from .encoders import EncodedEpisode, EpisodeEncoder, Vocabulary, collate, vocab_for_training
from .mbti import PersonalityProfile
from .metrics import EvalReport, accuracy, multilabel_report, paired_bootstrap
from .predictor import (
    PersonalityPredictor,
    PersonSample,
    PredictorConfig,
    collate_persons,
    person_samples,
    predicted_profiles,
    score_persons,
)
from .reasoner import PRM, ModalityMask, PRMConfig, save_checkpoint

log = logging.getLogger(__name__)

ABLATION_MODALITIES = ("D", "V", "B", "D+V+B")


class Divergence(RuntimeError):
    pass


def warmup_factor(step: int, warmup_steps: int) -> float:
    """Linear warmup to 1 over ``warmup_steps`` updates, then constant."""
    if warmup_steps <= 0:
        return 1.0
    return min(1.0, step / warmup_steps)


def build_optimizer(model: torch.nn.Module, cfg: TrainConfig) -> torch.optim.Optimizer:
    fusion, rest = [], []
    for name, p in model.named_parameters():
        (fusion if any(name.startswith(pre) for pre in cfg.fusion_prefixes) else rest).append(p)
    ids = [id(p) for p in fusion] + [id(p) for p in rest]
    assert len(ids) == len(set(ids)) == len(list(model.parameters())), "parameter groups must partition the model"
    groups = [
        {"params": fusion, "lr": cfg.lr_fusion_linear, "name": "fusion_linear", "base_lr": cfg.lr_fusion_linear},
        {"params": rest, "lr": cfg.lr_rest, "name": "rest", "base_lr": cfg.lr_rest},
    ]
    return torch.optim.Adam([g for g in groups if g["params"]])


def corpus_hash(episodes: Sequence[ClipEpisode]) -> str:
    h = hashlib.sha256()
    for e in episodes:
        h.update(json.dumps(e.to_json(), sort_keys=True).encode())
        if e.visual is not None:
            h.update(e.visual.v2d.tobytes())
            h.update(e.visual.v3d.tobytes())
            h.update(e.visual.timestamps.tobytes())
    return h.hexdigest()[:12]


@dataclass
class RunManifest:
    kind: str
    config_hash: str
    corpus_hash: str
    seeds: List[int]
    per_seed: List[dict]
    mean: Dict[str, Optional[float]]
    wall_time: float = 0.0
    artifacts: Dict[str, str] = field(default_factory=dict)
    defaults: Dict[str, object] = field(default_factory=dict)
    label: str = ""

    def to_json(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True))

    def predictions(self) -> np.ndarray:
        """Test predictions of all successful seeds, concatenated in seed order."""
        return np.concatenate([np.asarray(r["test_predictions"]) for r in self.per_seed if r["status"] == "ok"])

    def gold(self) -> np.ndarray:
        return np.concatenate([np.asarray(r["test_gold"]) for r in self.per_seed if r["status"] == "ok"])

    @property
    def diverged(self) -> bool:
        return any(r["status"] != "ok" for r in self.per_seed)


def _mean_of(per_seed: Sequence[dict], keys: Sequence[str]) -> Dict[str, Optional[float]]:
    ok = [r for r in per_seed if r["status"] == "ok"]
    return {k: (float(np.mean([r[k] for r in ok])) if ok else None) for k in keys}


def _fit(model, train_items, make_batch, loss_fn, validate, cfg: TrainConfig, seed: int):
    """Generic loop: warmup, two LR groups, early stopping on a higher-is-better metric."""
    opt = build_optimizer(model, cfg)
    steps_per_epoch = max(1, -(-len(train_items) // cfg.batch_size))
    warmup = int(round(cfg.warmup_fraction * steps_per_epoch * cfg.epochs))
    rng = make_rng(seed)
    best_metric, best_state, best_epoch, bad = -np.inf, None, -1, 0
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        model.train()
        order = rng.permutation(len(train_items))
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            batch = make_batch([train_items[j] for j in order[i : i + cfg.batch_size]])
            step += 1
            f = warmup_factor(step, warmup)
            for g in opt.param_groups:
                g["lr"] = g["base_lr"] * f
            loss = loss_fn(model, batch)
            if not torch.isfinite(loss):
                raise Divergence(f"non-finite loss at epoch {epoch}, step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        metric = validate(model)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_metric": metric})
        log.info("seed %d epoch %d loss %.4f val %.4f", seed, epoch, history[-1]["train_loss"], metric)
        if metric > best_metric:
            best_metric, best_state, best_epoch, bad = metric, copy.deepcopy(model.state_dict()), epoch, 0
        else:
            bad += 1
            if bad >= cfg.patience:
                break
    model.load_state_dict(best_state)
    model.eval()
    return {"best_val": float(best_metric), "best_epoch": best_epoch, "history": history}


def make_splits(episodes: Sequence[ClipEpisode], cfg: ExperimentConfig) -> Tuple[CorpusSplit, CorpusSplit]:
    """Reasoning split over the first ``phmrd_count`` clips and the personality split over all clips.

    The personality split trains on the remaining clips and tests on every reasoning clip.
    With no extra clips the personality split reuses the reasoning split.
    """
    n = cfg.split.phmrd_count or len(episodes)
    if n > len(episodes):
        raise ValueError(f"phmrd_count={n} exceeds corpus size {len(episodes)}")
    phmrd = list(episodes[:n])
    reasoning = split_corpus(phmrd, cfg.split.ratios, cfg.split.seed)
    if n == len(episodes):
        return reasoning, reasoning
    return reasoning, build_mpp_split(episodes, [e.id for e in phmrd], cfg.split.seed)


# -- reasoning model -------------------------------------------------------


@dataclass
class PreparedReasoning:
    vocab: Vocabulary
    encoder: EpisodeEncoder
    train: List[EncodedEpisode]
    validation: List[EncodedEpisode]
    test: List[EncodedEpisode]
    d_raw: int


def _d_raw(episodes: Sequence[ClipEpisode]) -> int:
    for e in episodes:
        if e.visual is not None:
            return e.visual.v2d.shape[1] + e.visual.v3d.shape[1]
    return 1


def prepare_reasoning(episodes: Sequence[ClipEpisode], split: CorpusSplit, cfg: ExperimentConfig,
                      profiles: Optional[Mapping[str, PersonalityProfile]] = None,
                      vocab: Optional[Vocabulary] = None) -> PreparedReasoning:
    """Vocabulary from the training part only; ``profiles`` replaces each clip's annotated profile."""
    train_eps = select(episodes, split.train)
    vocab = vocab or vocab_for_training(train_eps, cfg.train.vocab_max_size, cfg.train.vocab_min_freq)
    encoder = EpisodeEncoder(vocab, cfg.encoder)

    def enc(ids):
        return [encoder.encode(e, profile=None if profiles is None else profiles[e.id]) for e in select(episodes, ids)]

    return PreparedReasoning(vocab, encoder, enc(split.train), enc(split.validation), enc(split.test), _d_raw(episodes))


def prm_config(cfg: ExperimentConfig, n_tokens: int, d_raw: int) -> PRMConfig:
    m = cfg.model
    return PRMConfig(n_tokens=n_tokens, dim=m.dim, d_raw=d_raw, heads=m.heads, dropout=m.dropout,
                     owner_embedding=m.owner_embedding, segment_embedding=m.segment_embedding, init_std=m.init_std)


@torch.no_grad()
def prm_probabilities(model: PRM, items: Sequence[EncodedEpisode], mask: ModalityMask, batch_size: int = 128) -> np.ndarray:
    model.eval()
    out = []
    for i in range(0, len(items), batch_size):
        batch = collate(items[i : i + batch_size], model.cfg.d_raw)
        out.append(model(model.embed(batch), mask).double().numpy())
    return np.concatenate(out)


def _reasoning_mask(cfg: ExperimentConfig, modalities: Optional[str], use_p: Optional[bool]) -> ModalityMask:
    mods = modalities or cfg.train.modalities
    if use_p is None:
        use_p = cfg.train.personality != "none"
    return ModalityMask.parse(mods, use_P=use_p)


def train_prm_seed(prep: PreparedReasoning, cfg: ExperimentConfig, seed: int, mask: ModalityMask):
    torch.manual_seed(seed)
    model = PRM(prm_config(cfg, len(prep.vocab), prep.d_raw))
    d_raw = prep.d_raw

    def validate(m):
        probs = prm_probabilities(m, prep.validation, mask)
        return accuracy(probs.argmax(1), [x.gold for x in prep.validation])

    info = _fit(model, prep.train, lambda items: collate(items, d_raw),
                lambda m, b: m.loss(b, mask), validate, cfg.train, seed)
    probs = prm_probabilities(model, prep.test, mask)
    preds = probs.argmax(1)
    gold = np.array([x.gold for x in prep.test])
    return model, {
        "seed": seed,
        "status": "ok",
        "val_accuracy": info["best_val"],
        "best_epoch": info["best_epoch"],
        "epochs_run": len(info["history"]),
        "accuracy": accuracy(preds, gold),
        "history": info["history"],
        "test_predictions": preds.tolist(),
        "test_gold": gold.tolist(),
    }


def _defaults(cfg: ExperimentConfig) -> Dict[str, object]:
    t, m = cfg.train, cfg.model
    return {
        "dim": m.dim, "heads": m.heads, "dropout": m.dropout, "batch_size": t.batch_size,
        "warmup_fraction": t.warmup_fraction, "patience": t.patience, "epochs": t.epochs,
        "lr_fusion_linear": t.lr_fusion_linear, "lr_rest": t.lr_rest, "optimizer": "adam",
        "max_utterance_len": cfg.encoder.max_utterance_len, "max_option_len": cfg.encoder.max_option_len,
        "max_behavior_len": cfg.encoder.max_behavior_len, "max_phrase_len": cfg.encoder.max_phrase_len,
    }


def train_reasoner(episodes: Sequence[ClipEpisode], split: CorpusSplit, cfg: ExperimentConfig,
                   modalities: Optional[str] = None, use_p: Optional[bool] = None,
                   profiles: Optional[Mapping[str, PersonalityProfile]] = None,
                   out_dir: Optional[Path] = None, prepared: Optional[PreparedReasoning] = None,
                   seeds: Optional[Sequence[int]] = None) -> RunManifest:
    t0 = time.time()
    mask = _reasoning_mask(cfg, modalities, use_p)
    prep = prepared or prepare_reasoning(episodes, split, cfg, profiles)
    seeds = list(seeds or cfg.train.seeds)
    per_seed, artifacts = [], {}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        prep.vocab.save(out_dir / "vocab.txt")
        artifacts["vocab"] = str(out_dir / "vocab.txt")
    for seed in seeds:
        try:
            model, rec = train_prm_seed(prep, cfg, seed, mask)
        except Divergence as e:
            log.warning("seed %d diverged: %s", seed, e)
            per_seed.append({"seed": seed, "status": "diverged", "error": str(e)})
            continue
        per_seed.append(rec)
        if out_dir is not None:
            path = out_dir / f"prm-seed{seed}.npz"
            save_checkpoint(path, model, {"model": model.cfg.to_json(), "encoder": asdict(cfg.encoder),
                                          "modalities": mask.label(), "use_P": mask.use_P}, "prm")
            artifacts[f"checkpoint_seed{seed}"] = str(path)
    manifest = RunManifest(
        kind="prm", config_hash=cfg.hash(), corpus_hash=corpus_hash(episodes), seeds=seeds,
        per_seed=per_seed, mean=_mean_of(per_seed, ["accuracy", "val_accuracy"]),
        wall_time=time.time() - t0, artifacts=artifacts, defaults=_defaults(cfg), label=mask.label(),
    )
    if out_dir is not None:
        manifest.save(out_dir / "manifest.json")
    return manifest


# -- personality predictor -------------------------------------------------


@dataclass
class PreparedPersons:
    vocab: Vocabulary
    encoder: EpisodeEncoder
    train: List[PersonSample]
    validation: List[PersonSample]
    test: List[PersonSample]
    d_raw: int


def prepare_persons(episodes: Sequence[ClipEpisode], mpp_split: CorpusSplit, cfg: ExperimentConfig,
                    vocab: Optional[Vocabulary] = None) -> PreparedPersons:
    train_eps = select(episodes, mpp_split.train)
    vocab = vocab or vocab_for_training(train_eps, cfg.train.vocab_max_size, cfg.train.vocab_min_freq)
    encoder = EpisodeEncoder(vocab, cfg.encoder)

    def samples(ids):
        eps = select(episodes, ids)
        return person_samples(eps, [encoder.encode(e) for e in eps], encoder)

    return PreparedPersons(vocab, encoder, samples(mpp_split.train), samples(mpp_split.validation),
                           samples(mpp_split.test), _d_raw(episodes))


def predictor_config(cfg: ExperimentConfig, n_tokens: int, d_raw: int) -> PredictorConfig:
    m = cfg.model
    mods = {x.strip().upper() for x in cfg.train.predictor_modalities.split("+")}
    return PredictorConfig(n_tokens=n_tokens, dim=m.dim, d_raw=d_raw, heads=m.heads, dropout=m.dropout,
                           use_D="D" in mods, use_V="V" in mods, owner_embedding=m.owner_embedding,
                           segment_embedding=m.segment_embedding, init_std=m.init_std)


def majority_scores(train: Sequence[PersonSample], n: int) -> np.ndarray:
    """Constant per-axis first-pole frequencies from the training annotations."""
    freq = np.mean([s.target for s in train], axis=0)
    return np.tile(freq, (n, 1))


def train_predictor_seed(prep: PreparedPersons, cfg: ExperimentConfig, seed: int):
    torch.manual_seed(seed)
    model = PersonalityPredictor(predictor_config(cfg, len(prep.vocab), prep.d_raw))
    gold_val = [s.target for s in prep.validation]

    def validate(m):
        return multilabel_report(score_persons(m, prep.validation), gold_val, cfg.train.tau)["average_precision"]

    info = _fit(model, prep.train, lambda items: collate_persons(items, prep.d_raw),
                lambda m, b: m.loss(b), validate, cfg.train, seed)
    scores = score_persons(model, prep.test)
    rec = {"seed": seed, "status": "ok", "val_average_precision": info["best_val"],
           "best_epoch": info["best_epoch"], "epochs_run": len(info["history"]), "history": info["history"]}
    rec.update(multilabel_report(scores, [s.target for s in prep.test], cfg.train.tau))
    return model, scores, rec


def train_personality(episodes: Sequence[ClipEpisode], mpp_split: CorpusSplit, cfg: ExperimentConfig,
                      out_dir: Optional[Path] = None, prepared: Optional[PreparedPersons] = None,
                      seeds: Optional[Sequence[int]] = None):
    """Returns the manifest and, per seed, the predictor's test scores."""
    t0 = time.time()
    prep = prepared or prepare_persons(episodes, mpp_split, cfg)
    seeds = list(seeds or cfg.train.seeds)
    per_seed, scores_by_seed, artifacts = [], {}, {}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        prep.vocab.save(out_dir / "vocab.txt")
        artifacts["vocab"] = str(out_dir / "vocab.txt")
    for seed in seeds:
        try:
            model, scores, rec = train_predictor_seed(prep, cfg, seed)
        except Divergence as e:
            per_seed.append({"seed": seed, "status": "diverged", "error": str(e)})
            continue
        per_seed.append(rec)
        scores_by_seed[seed] = scores
        if out_dir is not None:
            path = out_dir / f"predictor-seed{seed}.npz"
            save_checkpoint(path, model, {"model": model.cfg.to_json(), "encoder": asdict(cfg.encoder)}, "predictor")
            artifacts[f"checkpoint_seed{seed}"] = str(path)
    baseline = multilabel_report(majority_scores(prep.train, len(prep.test)), [s.target for s in prep.test], cfg.train.tau)
    manifest = RunManifest(
        kind="predictor", config_hash=cfg.hash(), corpus_hash=corpus_hash(episodes), seeds=seeds,
        per_seed=per_seed, mean=_mean_of(per_seed, ["hamming_loss", "ranking_loss", "average_precision"]),
        wall_time=time.time() - t0, artifacts=artifacts, defaults=_defaults(cfg), label="majority=" + json.dumps(baseline),
    )
    manifest.defaults["majority_baseline"] = baseline
    manifest.defaults["n_test"] = len(prep.test)
    if out_dir is not None:
        manifest.save(out_dir / "manifest.json")
    return manifest, scores_by_seed, prep


def eval_report(manifest: RunManifest) -> EvalReport:
    ok = [r for r in manifest.per_seed if r["status"] == "ok"]
    keys = EvalReport.METRICS
    per_seed = [{k: r.get(k) for k in ("seed",) + keys} for r in ok]
    n = len(ok[0]["test_gold"]) if ok and "test_gold" in ok[0] else int(manifest.defaults.get("n_test", 0))
    return EvalReport.from_seeds(per_seed, n_samples=n, kind=manifest.kind, label=manifest.label)


# -- experiments -----------------------------------------------------------


def personality_benefit(with_p: RunManifest, without_p: RunManifest, n_resamples: int = 10000, seed: int = 0) -> dict:
    """Accuracy delta (with minus without) and a one-sided paired bootstrap p-value
    over the concatenated per-seed test predictions."""
    gold = with_p.gold()
    if not np.array_equal(gold, without_p.gold()):
        raise ValueError("runs are not aligned on the same test items and seeds")
    return {
        "with_P": with_p.mean["accuracy"],
        "without_P": without_p.mean["accuracy"],
        "delta": with_p.mean["accuracy"] - without_p.mean["accuracy"],
        "p_value": paired_bootstrap(with_p.predictions(), without_p.predictions(), gold, n_resamples, seed),
    }


def ablation_suite(episodes: Sequence[ClipEpisode], split: CorpusSplit, cfg: ExperimentConfig,
                   modalities: Sequence[str] = ABLATION_MODALITIES):
    """Modalities x {with P, without P}: 2 * len(modalities) runs plus paired deltas."""
    prep = prepare_reasoning(episodes, split, cfg)
    rows, deltas = [], []
    for mods in modalities:
        runs = {}
        for use_p in (True, False):
            runs[use_p] = train_reasoner(episodes, split, cfg, modalities=mods, use_p=use_p, prepared=prep)
            rows.append({"modalities": mods, "personality": use_p, "accuracy": runs[use_p].mean["accuracy"],
                         "manifest": runs[use_p]})
        d = personality_benefit(runs[True], runs[False], cfg.train.bootstrap_resamples)
        d["modalities"] = mods
        deltas.append(d)
    return rows, deltas


def profiles_from_scores(samples: Sequence[PersonSample], scores: np.ndarray, cfg: ExperimentConfig):
    preds = predicted_profiles(samples, scores, cfg.train.profile_pooling, cfg.train.tau)
    return {eid: p.types for eid, p in preds.items()}


def stage2(episodes: Sequence[ClipEpisode], phmrd_split: CorpusSplit, mpp_split: CorpusSplit,
           cfg: ExperimentConfig, modalities: Optional[str] = None,
           predictor_run=None, gold_run: Optional[RunManifest] = None):
    """Per seed: predictor -> predicted profiles for every reasoning clip -> reasoner retrained from scratch.

    Returns the predictor manifest, the predicted-profile reasoner manifest,
    the gold-profile reasoner manifest, and the mean accuracy drop.
    """
    if predictor_run is None:
        predictor_run = train_personality(episodes, mpp_split, cfg)
    p_manifest, scores_by_seed, pprep = predictor_run
    phmrd_ids = set(phmrd_split.train) | set(phmrd_split.validation) | set(phmrd_split.test)
    if set(mpp_split.test) != phmrd_ids:
        raise ValueError("the personality test split must be exactly the reasoning corpus")
    per_seed = []
    vocab = None
    for seed in cfg.train.seeds:
        if seed not in scores_by_seed:
            per_seed.append({"seed": seed, "status": "diverged", "error": "predictor diverged"})
            continue
        profiles = profiles_from_scores(pprep.test, scores_by_seed[seed], cfg)
        prep = prepare_reasoning(episodes, phmrd_split, cfg, profiles=profiles, vocab=vocab)
        vocab = prep.vocab
        run = train_reasoner(episodes, phmrd_split, cfg, modalities=modalities, use_p=True, prepared=prep, seeds=[seed])
        per_seed.extend(run.per_seed)
    pred_manifest = RunManifest(
        kind="prm-predicted", config_hash=cfg.hash(), corpus_hash=corpus_hash(episodes), seeds=list(cfg.train.seeds),
        per_seed=per_seed, mean=_mean_of(per_seed, ["accuracy", "val_accuracy"]), defaults=_defaults(cfg),
        label=(modalities or cfg.train.modalities) + " P'",
    )
    if gold_run is None:
        gold_run = train_reasoner(episodes, phmrd_split, cfg, modalities=modalities, use_p=True)
    drop = gold_run.mean["accuracy"] - pred_manifest.mean["accuracy"]
    return p_manifest, pred_manifest, gold_run, drop


def numbers(manifest: RunManifest) -> dict:
    """Every reported number of a run, without wall-clock time."""
    d = manifest.to_json()
    d.pop("wall_time", None)
    d.pop("artifacts", None)
    return d


@torch.no_grad()
def reason_with_predicted(episode: ClipEpisode, predictor: PersonalityPredictor, reasoner: PRM,
                          encoder: EpisodeEncoder, mask: Optional[ModalityMask] = None,
                          tau: float = 0.5, predictor_encoder: Optional[EpisodeEncoder] = None) -> np.ndarray:
    """Answer distribution for one clip with its profile replaced by the predictor's output."""
    penc = predictor_encoder or encoder
    samples = person_samples([episode], [penc.encode(episode)], penc, with_targets=False)
    scores = score_persons(predictor, samples)
    profile = predicted_profiles(samples, scores, "clip", tau)[episode.id].types
    item = encoder.encode(episode, profile=profile)
    return prm_probabilities(reasoner, [item], mask or ModalityMask())[0]
