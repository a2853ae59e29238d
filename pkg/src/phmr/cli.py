"""Command-line entry point: ``phmr <verb> --config FILE --set key=value ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import harness
from .baselines import rule_baseline
from .config import ConfigError, ExperimentConfig, load_config
from .corpus import CorpusSplit, corpus_statistics, load_corpus, save_corpus, select
from .metrics import EvalReport, accuracy
from .predictor import predicted_profiles, save_predicted_profiles
from .reports import stats_report, word_frequency_report
from .synth import generate_corpus

log = logging.getLogger("phmr")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3


def run_dir(args, cfg: ExperimentConfig) -> Path:
    d = Path(args.runs) / f"{args.verb}-{cfg.hash()}"
    d.mkdir(parents=True, exist_ok=True)
    cfg.save(d / "config.yaml")
    return d


def get_corpus(args, cfg: ExperimentConfig):
    if args.corpus:
        return load_corpus(args.corpus)
    episodes, _ = generate_corpus(cfg.generator)
    return episodes


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=str))


def write_report(out: Path, name: str, report: EvalReport) -> None:
    write_json(out / f"{name}.json", report.to_json())
    (out / f"{name}.csv").write_text(report.to_csv())


def cmd_gen(args, cfg, out: Path) -> int:
    episodes, trace = generate_corpus(cfg.generator)
    save_corpus(out / "corpus.jsonl", episodes)
    trace.save(out / "gold_trace.json")
    write_json(out / "statistics.json", corpus_statistics(episodes).to_dict())
    print(out / "corpus.jsonl")
    return EXIT_OK


def cmd_split(args, cfg, out: Path) -> int:
    reasoning, personality = harness.make_splits(get_corpus(args, cfg), cfg)
    write_json(out / "splits.json", {"reasoning": reasoning.to_json(), "personality": personality.to_json()})
    print(out / "splits.json")
    return EXIT_OK


def _status(manifest) -> int:
    return EXIT_DIVERGED if manifest.diverged else EXIT_OK


def cmd_train(args, cfg, out: Path) -> int:
    episodes = get_corpus(args, cfg)
    reasoning, personality = harness.make_splits(episodes, cfg)
    if args.kind == "predictor":
        manifest, _, _ = harness.train_personality(episodes, personality, cfg, out_dir=out)
    else:
        profiles = None
        if cfg.train.personality == "predicted":
            if not args.profiles:
                raise ConfigError("train.personality=predicted needs --profiles")
            from .predictor import load_predicted_profiles

            profiles = load_predicted_profiles(args.profiles)
        manifest = harness.train_reasoner(episodes, reasoning, cfg, profiles=profiles, out_dir=out)
    print(json.dumps(manifest.mean))
    return _status(manifest)


def cmd_eval(args, cfg, out: Path) -> int:
    if args.baseline:
        episodes = get_corpus(args, cfg)
        reasoning, _ = harness.make_splits(episodes, cfg)
        test = select(episodes, reasoning.test)
        preds = rule_baseline(args.baseline, test, seed=cfg.train.seeds[0])
        report = EvalReport.from_seeds([{"accuracy": accuracy(preds, [e.gold for e in test])}],
                                       n_samples=len(test), kind="baseline", label=args.baseline)
    else:
        if not args.run:
            raise ConfigError("eval needs --run or --baseline")
        manifest = harness.RunManifest(**json.loads((Path(args.run) / "manifest.json").read_text()))
        report = harness.eval_report(manifest)
    write_report(out, "report", report)
    print(report.to_csv(), end="")
    return EXIT_OK


def cmd_ablate(args, cfg, out: Path) -> int:
    episodes = get_corpus(args, cfg)
    reasoning, _ = harness.make_splits(episodes, cfg)
    rows, deltas = harness.ablation_suite(episodes, reasoning, cfg)
    table = [{k: v for k, v in r.items() if k != "manifest"} for r in rows]
    write_json(out / "ablation.json", {"rows": table, "deltas": deltas,
                                      "manifests": [harness.numbers(r["manifest"]) for r in rows]})
    lines = ["modalities,personality,accuracy"] + [f"{r['modalities']},{r['personality']},{r['accuracy']}" for r in table]
    lines += ["modalities,delta,p_value"] + [f"{d['modalities']},{d['delta']},{d['p_value']}" for d in deltas]
    (out / "ablation.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_DIVERGED if any(r["manifest"].diverged for r in rows) else EXIT_OK


def cmd_predict(args, cfg, out: Path) -> int:
    episodes = get_corpus(args, cfg)
    _, personality = harness.make_splits(episodes, cfg)
    manifest, scores_by_seed, prep = harness.train_personality(episodes, personality, cfg, out_dir=out)
    for seed, scores in scores_by_seed.items():
        preds = predicted_profiles(prep.test, scores, cfg.train.profile_pooling, cfg.train.tau)
        save_predicted_profiles(out / f"profiles-seed{seed}.json", preds)
    write_report(out, "report", harness.eval_report(manifest))
    print(json.dumps(manifest.mean))
    return _status(manifest)


def cmd_stage2(args, cfg, out: Path) -> int:
    episodes = get_corpus(args, cfg)
    reasoning, personality = harness.make_splits(episodes, cfg)
    pm, predm, goldm, drop = harness.stage2(episodes, reasoning, personality, cfg)
    for name, m in (("predictor", pm), ("reasoner_predicted", predm), ("reasoner_gold", goldm)):
        m.save(out / f"{name}.json")
    summary = {"gold_accuracy": goldm.mean["accuracy"], "predicted_accuracy": predm.mean["accuracy"], "drop": drop,
               "predictor": pm.mean}
    write_json(out / "stage2.json", summary)
    print(json.dumps(summary))
    return EXIT_DIVERGED if pm.diverged or predm.diverged or goldm.diverged else EXIT_OK


def cmd_report(args, cfg, out: Path) -> int:
    episodes = get_corpus(args, cfg)
    n = cfg.split.phmrd_count or len(episodes)
    corpora = {"reasoning": episodes[:n]}
    if n < len(episodes):
        corpora["personality"] = episodes
    md, data = stats_report(corpora)
    (out / "statistics.md").write_text(md)
    write_json(out / "statistics.json", data)
    for axis in args.axes:
        lists, cloud = word_frequency_report(episodes[:n], axis)
        write_json(out / f"words-{axis}.json", {"lists": lists, "cloud": cloud})
    print(md)
    return EXIT_OK


VERBS = {
    "gen": cmd_gen,
    "split": cmd_split,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "predict-personality": cmd_predict,
    "stage2": cmd_stage2,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phmr", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        p = sub.add_parser(verb)
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted override, e.g. train.epochs=5")
        p.add_argument("--runs", default="runs", help="parent directory for run outputs")
        p.add_argument("-v", "--verbose", action="store_true")
        if verb != "gen":
            p.add_argument("--corpus", help="corpus .jsonl; generated from the config when omitted")
        if verb == "train":
            p.add_argument("--kind", choices=["prm", "predictor"], default="prm")
            p.add_argument("--profiles", help="predicted profiles JSON for train.personality=predicted")
        if verb == "eval":
            p.add_argument("--run", help="run directory holding manifest.json")
            p.add_argument("--baseline", choices=["random", "longest", "shortest"])
        if verb == "report":
            p.add_argument("--axes", nargs="*", default=["EI", "SN", "TF", "JP"])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
        return VERBS[args.verb](args, cfg, run_dir(args, cfg))
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
