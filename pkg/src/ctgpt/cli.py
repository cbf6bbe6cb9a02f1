"""Command-line entry point: ``ctgpt <command> [--config PATH] [--seed N] [--out DIR] ...``.

Exit codes: 0 success, 2 bad arguments, 3 invalid config, 4 data/format
problems, 5 contract violation (including a failed gradient check),
6 state errors, 7 missing files.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .config import RunConfig
from .errors import ArgumentError, ContractError, CtgptError, PathError
from .model import ModelBundle
from .nlg_metrics import METRICS, EvalReport
from .synth_corpus import Manifest, generate_corpus
from .text_lm import Vocab
from .trainer import (
    PLANS,
    StrategyPlan,
    build_base,
    evaluate_examples,
    generate_report,
    load_examples,
    run_strategy,
    standard_vocab,
    train_stage,
)
from .volume_prep import prepare_volume, read_ctvol

log = logging.getLogger("ctgpt")


# shared plumbing ------------------------------------------------------------------

class Session:
    """Resolves config-relative resources: corpora, vocabulary, base model, checkpoints."""

    def __init__(self, cfg: RunConfig, out: Optional[str]):
        self.cfg = cfg
        self.out = Path(out) if out else Path(cfg.out_dir)

    def manifest(self, name: str) -> Manifest:
        self.cfg.corpus(name)
        path = self.cfg.corpus_dir(name) / "manifest.jsonl"
        if not path.exists():
            raise PathError(f"corpus {name!r} not found at {path}; run `ctgpt gen-corpus` first")
        return Manifest.load(path)

    def existing_manifests(self) -> List[Manifest]:
        out = []
        for c in self.cfg.corpora:
            path = self.cfg.corpus_dir(c.name) / "manifest.jsonl"
            if path.exists():
                out.append(Manifest.load(path))
        return out

    def vocab(self) -> Vocab:
        path = Path(self.cfg.vocab_path)
        if path.exists():
            return Vocab.load(path)
        return standard_vocab(self.existing_manifests())

    def fresh(self, vocab: Vocab) -> ModelBundle:
        return ModelBundle.build(self.cfg.model_config(len(vocab)), seed=self.cfg.model_seed)

    def load(self, checkpoint, vocab: Vocab) -> ModelBundle:
        path = Path(checkpoint)
        if not path.exists():
            raise PathError(f"checkpoint {path} not found")
        bundle = self.fresh(vocab)
        bundle.load_weights(path)
        return bundle

    def base(self, vocab: Vocab) -> ModelBundle:
        """Warm-started base model, built once and cached at ``paths.base_checkpoint``."""
        path = Path(self.cfg.base_checkpoint)
        if path.exists():
            return self.load(path, vocab)
        log.info("building base model (warm start, %d steps); cached at %s", self.cfg.warm_start.steps, path)
        bundle = build_base(self.cfg.model_config(len(vocab)), vocab, seed=self.cfg.model_seed, warm=self.cfg.warm_start)
        path.parent.mkdir(parents=True, exist_ok=True)
        bundle.save(path)
        return bundle

    def start(self, checkpoint: Optional[str], vocab: Vocab) -> ModelBundle:
        return self.load(checkpoint, vocab) if checkpoint else self.base(vocab)

    def write_snapshot(self, out: Path, **extra) -> None:
        out.mkdir(parents=True, exist_ok=True)
        snap = self.cfg.snapshot()
        snap.update(extra)
        (out / "config.json").write_text(json.dumps(snap, indent=2, sort_keys=True, default=str), encoding="utf-8")


def _default_corpus(cfg: RunConfig, stage: str) -> str:
    plan = PLANS[cfg.strategy]
    return next(p.corpus for p in plan.phases if p.stage == stage)


# commands ---------------------------------------------------------------------------

def cmd_prep(s: Session, a) -> int:
    src = Path(a.input)
    if not src.exists():
        raise PathError(f"input {src} not found")
    files = sorted(src.glob("*.ctvl")) if src.is_dir() else [src]
    if not files:
        raise PathError(f"no .ctvl files under {src}")
    out = s.out / "prepared" if a.out is None else s.out
    out.mkdir(parents=True, exist_ok=True)
    prep = s.cfg.prep_config()
    for f in files:
        vol = prepare_volume(read_ctvol(f), prep)
        np.save(out / f"{f.stem}.npy", vol.values.astype(np.float32))
    print(f"prepared {len(files)} volume(s) into {out}")
    return 0


def cmd_gen_corpus(s: Session, a) -> int:
    names = [a.corpus] if a.corpus else [c.name for c in s.cfg.corpora]
    for name in names:
        spec = s.cfg.corpus(name)
        seed = spec.seed if a.seed is None else a.seed
        out = Path(a.out) / name if a.out else s.cfg.corpus_dir(name)
        m = generate_corpus(spec.n, spec.style, out, dims=s.cfg.volume_dims, seed=seed,
                            spacing=s.cfg.target_spacing, patch=s.cfg.patch)
        print(f"{name}: {len(m.records)} records {m.counts()} -> {out}")
    return 0


def cmd_build_vocab(s: Session, a) -> int:
    vocab = standard_vocab(s.existing_manifests())
    path = Path(a.out) if a.out else Path(s.cfg.vocab_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    vocab.save(path)
    print(f"{len(vocab)} tokens -> {path}")
    return 0


def _run_stage(s: Session, a, stage: str) -> int:
    if stage == "finetune" and not a.checkpoint:
        raise ArgumentError("finetune needs --checkpoint (the pretrained model)")
    vocab = s.vocab()
    bundle = s.start(a.checkpoint, vocab)
    corpus = a.corpus or _default_corpus(s.cfg, stage)
    examples = load_examples(bundle, s.manifest(corpus), "train")
    res = train_stage(bundle, examples, vocab, s.cfg.stage(stage), seed=s.cfg.seed)
    out = s.out
    s.write_snapshot(out, command=stage, corpus=corpus, checkpoint=a.checkpoint)
    bundle.save(out / f"{stage}.ckpt")
    vocab.save(out / "vocab.tsv")
    (out / f"{stage}_loss.tsv").write_text("".join(f"{i}\t{v:.6f}\n" for i, v in enumerate(res.losses)), encoding="utf-8")
    print(f"{stage}: {res.steps} steps on {corpus}, final loss {res.losses[-1]:.4f} -> {out / f'{stage}.ckpt'}")
    return 0


def cmd_pretrain(s: Session, a) -> int:
    return _run_stage(s, a, "pretrain")


def cmd_finetune(s: Session, a) -> int:
    return _run_stage(s, a, "finetune")


def cmd_run_strategy(s: Session, a) -> int:
    plan = StrategyPlan.named(a.plan or s.cfg.strategy)
    vocab = s.vocab()
    base = s.base(vocab)
    corpora = {name: s.manifest(name) for name in set(plan.corpora() + [s.cfg.eval_corpus])}
    out = s.out / f"{plan.name}_seed{s.cfg.seed}"
    temperature = s.cfg.temperature if a.temperature is None else a.temperature
    res = run_strategy(
        plan, corpora, base, vocab, seed=s.cfg.seed,
        stage_overrides={"pretrain": replace(s.cfg.pretrain, epochs=plan.phases[0].epochs),
                         "finetune": replace(s.cfg.finetune, epochs=plan.phases[1].epochs)},
        eval_corpus=s.cfg.eval_corpus, eval_split=s.cfg.eval_split, temperature=temperature,
        out_dir=out, snapshot={"config": s.cfg.snapshot()},
    )
    vocab.save(out / "vocab.tsv")
    sys.stdout.write(res.report.to_tsv(plan.name))
    return 0


def cmd_generate(s: Session, a) -> int:
    if not a.checkpoint:
        raise ArgumentError("generate needs --checkpoint")
    vocab = s.vocab()
    bundle = s.load(a.checkpoint, vocab)
    path = Path(a.volume)
    if not path.exists():
        raise PathError(f"volume {path} not found")
    values = prepare_volume(read_ctvol(path), s.cfg.prep_config()).values
    temperature = s.cfg.temperature if a.temperature is None else a.temperature
    text = generate_report(bundle, vocab, bundle.encode(values[None]), temperature, seed=s.cfg.seed, max_new=s.cfg.max_new)
    print(text)
    return 0


def _eval_examples(s: Session, a, bundle: ModelBundle):
    corpus = a.corpus or s.cfg.eval_corpus
    split = a.split or s.cfg.eval_split
    return corpus, split, load_examples(bundle, s.manifest(corpus), split)


def cmd_evaluate(s: Session, a) -> int:
    if not a.checkpoint:
        raise ArgumentError("evaluate needs --checkpoint")
    vocab = s.vocab()
    bundle = s.load(a.checkpoint, vocab)
    corpus, split, examples = _eval_examples(s, a, bundle)
    temperature = s.cfg.temperature if a.temperature is None else a.temperature
    report = evaluate_examples(bundle, vocab, examples, temperature, s.cfg.seed,
                               metadata={"corpus": f"{corpus}/{split}", "checkpoint": str(a.checkpoint)})
    label = Path(a.checkpoint).stem
    report.save(s.out, label=label)
    sys.stdout.write(report.to_tsv(label))
    return 0


def sweep_table(reports: Sequence[EvalReport], temperatures: Sequence[float]) -> str:
    lines = ["\t".join(("Temperature",) + METRICS)]
    for t, r in zip(temperatures, reports):
        means = r.means
        lines.append("\t".join([f"{t:.2f}"] + [f"{means[m]:.4f}" for m in METRICS]))
    return "\n".join(lines) + "\n"


def cmd_temp_sweep(s: Session, a) -> int:
    if not a.checkpoint:
        raise ArgumentError("temp-sweep needs --checkpoint")
    vocab = s.vocab()
    bundle = s.load(a.checkpoint, vocab)
    corpus, split, examples = _eval_examples(s, a, bundle)
    temps = tuple(a.temperatures) if a.temperatures else s.cfg.sweep
    reports = [evaluate_examples(bundle, vocab, examples, t, s.cfg.seed, metadata={"corpus": f"{corpus}/{split}"})
               for t in temps]
    table = sweep_table(reports, temps)
    s.out.mkdir(parents=True, exist_ok=True)
    (s.out / "sweep.tsv").write_text(table, encoding="utf-8")
    (s.out / "sweep.json").write_text(json.dumps(
        [{"temperature": t, "means": r.means} for t, r in zip(temps, reports)], indent=2), encoding="utf-8")
    sys.stdout.write(table)
    return 0


def cmd_gradcheck(s: Session, a) -> int:
    from .gradsuite import pipeline_gradcheck

    vocab = s.vocab()
    groups = tuple(a.groups.split(",")) if a.groups else ("projector", "lora")
    results = pipeline_gradcheck(s.cfg.model_config(len(vocab)), vocab, seed=s.cfg.seed, groups=groups,
                                 max_entries=a.max_entries)
    for r in results:
        print(f"{'ok  ' if r.passed else 'FAIL'} {r.name:32s} rel_err={r.rel_error:.3e} checked={r.checked}")
    bad = [r.name for r in results if not r.passed]
    if bad:
        raise ContractError(f"gradient check failed for {bad}")
    return 0


COMMANDS = {
    "prep": cmd_prep,
    "gen-corpus": cmd_gen_corpus,
    "build-vocab": cmd_build_vocab,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "run-strategy": cmd_run_strategy,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
    "temp-sweep": cmd_temp_sweep,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ArgumentError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run config (defaults to the built-in desk config)")
    common.add_argument("--seed", type=int, help="run seed (overrides [run].seed)")
    common.add_argument("--out", help="output directory (overrides [paths].out_dir)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="ctgpt", description="CT report generation pipeline")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    c = sub.add_parser("prep", parents=[common], help="prepare .ctvl volumes into normalized arrays")
    c.add_argument("--input", required=True, help=".ctvl file or directory")
    c = sub.add_parser("gen-corpus", parents=[common], help="generate the configured synthetic corpora")
    c.add_argument("--corpus", help="only this corpus")
    sub.add_parser("build-vocab", parents=[common], help="write the vocabulary file")
    for name in ("pretrain", "finetune"):
        c = sub.add_parser(name, parents=[common], help=f"run the {name} stage")
        c.add_argument("--checkpoint", help="starting checkpoint (pretrain defaults to the base model)")
        c.add_argument("--corpus", help="training corpus (defaults to the configured strategy's choice)")
    c = sub.add_parser("run-strategy", parents=[common], help="run a T1/T2/T3 plan end to end")
    c.add_argument("--plan", choices=sorted(PLANS))
    c.add_argument("--temperature", type=float)
    c = sub.add_parser("generate", parents=[common], help="write a report for one volume")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--volume", required=True)
    c.add_argument("--temperature", type=float)
    for name in ("evaluate", "temp-sweep"):
        c = sub.add_parser(name, parents=[common], help=f"{name} a checkpoint on a corpus split")
        c.add_argument("--checkpoint", required=True)
        c.add_argument("--corpus")
        c.add_argument("--split", choices=("train", "val", "test"))
        if name == "evaluate":
            c.add_argument("--temperature", type=float)
        else:
            c.add_argument("--temperatures", type=float, nargs="+")
    c = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the full pipeline")
    c.add_argument("--groups", help="comma-separated parameter groups (default projector,lora)")
    c.add_argument("--max-entries", type=int, help="sample at most this many coordinates per tensor")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        cfg = RunConfig.load(args.config) if args.config else RunConfig().validate()
        if args.seed is not None:
            cfg = cfg.with_overrides(seed=args.seed)
        return COMMANDS[args.command](Session(cfg, args.out), args)
    except CtgptError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
