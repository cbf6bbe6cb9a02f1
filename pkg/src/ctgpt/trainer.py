"""Projection-only pretraining, projection+LoRA fine-tuning and the T1/T2/T3 strategies."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ArgumentError, ConfigError, ContractError, DataError
from .model import ModelBundle, ModelConfig
from .nlg_metrics import EvalReport, evaluate_pairs
from .params import ParamStore
from .synth_corpus import Manifest, vocabulary_texts
from .tensor_core import Adam, Tensor, clip_grad_norm, cross_entropy, take_rows, warmup_steps_for
from .text_lm import PROMPTS, SYSTEM_MESSAGE, PromptSample, Vocab, assemble_prompt, build_vocab, choose_instruction, expand_for_splice
from .volume_prep import PrepConfig, prepare_volume, read_ctvol

log = logging.getLogger(__name__)

STAGES = ("pretrain", "finetune")
_TRAINABLE = {"pretrain": ("projector",), "finetune": ("projector", "lora")}


@dataclass(frozen=True)
class StageConfig:
    stage: str
    lr_max: float
    epochs: int
    batch_size: int = 1
    warmup_frac: float = 0.03
    grad_clip: float = 1.0
    # None draws a fresh instruction for every step; a string pins it, which
    # turns an overfit check into plain memorization of volume -> report.
    instruction: Optional[str] = None

    def validate(self) -> "StageConfig":
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if not self.lr_max > 0 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("stage needs lr_max > 0, epochs >= 1 and batch_size >= 1")
        if not 0 <= self.warmup_frac < 1 or not self.grad_clip > 0:
            raise ConfigError("warmup_frac must be in [0, 1) and grad_clip > 0")
        if self.instruction is not None and not self.instruction.strip():
            raise ConfigError("instruction must be non-empty when given")
        return self

    @property
    def trainable(self) -> Tuple[str, ...]:
        return _TRAINABLE[self.stage]

    def frozen_groups(self) -> Tuple[str, ...]:
        return tuple(g for g in ("encoder", "lm", "lora") if g not in self.trainable)


def pretrain_stage(epochs: int = 5, lr_max: float = 1e-3, **kw) -> StageConfig:
    return StageConfig("pretrain", lr_max, epochs, **kw).validate()


def finetune_stage(epochs: int = 2, lr_max: float = 2e-4, **kw) -> StageConfig:
    return StageConfig("finetune", lr_max, epochs, **kw).validate()


@dataclass(frozen=True)
class Phase:
    stage: str
    corpus: str
    epochs: int


@dataclass(frozen=True)
class StrategyPlan:
    name: str
    phases: Tuple[Phase, ...]

    @classmethod
    def named(cls, name: str) -> "StrategyPlan":
        try:
            return PLANS[name]
        except KeyError:
            raise ConfigError(f"unknown strategy {name!r}; choose from {sorted(PLANS)}") from None

    def corpora(self) -> List[str]:
        return sorted({p.corpus for p in self.phases})


PLANS = {
    "T1": StrategyPlan("T1", (Phase("pretrain", "public", 5), Phase("finetune", "private", 2))),
    # private data feeds both phases, run one after the other
    "T2": StrategyPlan("T2", (Phase("pretrain", "private", 5), Phase("finetune", "private", 2))),
    "T3": StrategyPlan("T3", (Phase("pretrain", "public", 5), Phase("finetune", "public", 2))),
}


# data -------------------------------------------------------------------------

@dataclass
class Example:
    id: str
    grid: Tensor
    report: str


def load_examples(
    bundle: ModelBundle,
    manifest: Manifest,
    split: str = "train",
    prep: Optional[PrepConfig] = None,
) -> List[Example]:
    """Prepare and encode each volume once; the encoder is frozen so token grids can be reused."""
    cfg = bundle.config.encoder
    prep = prep or PrepConfig(target_dims=cfg.input_dims, target_spacing=_spacing_for(manifest))
    out = []
    for rec in manifest.split(split):
        path = manifest.volume_path(rec)
        if not path.exists():
            raise DataError(f"record {rec.id}: volume {path} not found")
        if not rec.report.strip():
            raise DataError(f"record {rec.id}: empty report")
        vol = prepare_volume(read_ctvol(path), prep)
        out.append(Example(rec.id, bundle.encode(vol.values[None]), rec.report))
    if not out:
        raise DataError(f"manifest has no records in split {split!r}")
    return out


def _spacing_for(manifest: Manifest) -> Tuple[float, float, float]:
    # corpora generated here are stored at the target spacing already
    if not manifest.records:
        raise DataError("manifest has no records")
    path = manifest.volume_path(manifest.records[0])
    if not path.exists():
        raise DataError(f"record {manifest.records[0].id}: volume {path} not found")
    return read_ctvol(path).spacing_mm


# loss -------------------------------------------------------------------------

def masked_lm_loss(logits: Tensor, token_ids, loss_mask) -> Tensor:
    """Next-token cross entropy over targets whose mask is 1."""
    ids = np.asarray(token_ids, dtype=np.int64).reshape(-1)
    mask = np.asarray(loss_mask).reshape(-1)
    if logits.ndim != 3 or logits.shape[0] != 1 or logits.shape[1] != ids.size or mask.size != ids.size:
        raise ArgumentError(f"logits {logits.shape}, ids {ids.shape} and mask {mask.shape} disagree")
    if not mask[1:].any():
        raise ArgumentError("loss mask selects no target positions")
    if np.any((ids < 0) & (mask > 0)):
        raise ArgumentError("masked-in targets must be vocabulary ids")
    pred = take_rows(logits, 0, ids.size - 1, axis=1)
    return cross_entropy(pred, ids[None, 1:], mask[None, 1:])


def sample_loss(bundle: ModelBundle, grid: Optional[Tensor], sample: PromptSample) -> Tensor:
    logits = bundle.logits(sample.token_ids, grid)
    n_vis = logits.shape[1] - len(sample.token_ids) + 1 if grid is not None else 0
    ids, mask = expand_for_splice(sample.token_ids, sample.loss_mask, n_vis)
    return masked_lm_loss(logits, ids, mask)


# stage loop ---------------------------------------------------------------------

@dataclass
class StageResult:
    stage: str
    losses: List[float] = field(default_factory=list)
    lrs: List[float] = field(default_factory=list)
    digests: List[Dict[str, str]] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.losses)


def group_digests(store: ParamStore) -> Dict[str, str]:
    return {g: store.digest(g) for g in ("encoder", "projector", "lm", "lora") if store.has_group(g)}


def train_stage(
    bundle: ModelBundle,
    examples: Sequence[Example],
    vocab: Vocab,
    cfg: StageConfig,
    seed: int = 0,
    on_step: Optional[Callable[[int, float], None]] = None,
    max_steps: Optional[int] = None,
) -> StageResult:
    """Run ``cfg.epochs`` passes in seeded order, one optimizer step per batch.

    Frozen groups are hashed before training and after every epoch; any drift
    raises ContractError.
    """
    cfg.validate()
    if not examples:
        raise DataError("cannot train on an empty corpus")
    store = bundle.store
    store.set_trainable(cfg.trainable)
    batches_per_epoch = -(-len(examples) // cfg.batch_size)
    total = cfg.epochs * batches_per_epoch
    if max_steps is not None:
        total = min(total, max_steps)
    opt = Adam(store, cfg.lr_max, total, warmup_steps_for(total, cfg.warmup_frac))
    before = group_digests(store)
    frozen = cfg.frozen_groups()
    rng = np.random.default_rng([seed, STAGES.index(cfg.stage)])
    result = StageResult(cfg.stage)
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(examples))
        for b in range(batches_per_epoch):
            if step >= total:
                break
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            opt.zero_grad()
            batch_loss = 0.0
            for i in idx:
                ex = examples[i]
                instruction = cfg.instruction or choose_instruction(rng)
                sample = assemble_prompt(vocab, instruction, ex.report, training=True)
                loss = sample_loss(bundle, ex.grid, sample) * (1.0 / len(idx))
                loss.backward()
                batch_loss += loss.item()
            clip_grad_norm(store.trainable(), cfg.grad_clip)
            result.lrs.append(opt.step())
            result.losses.append(batch_loss)
            if on_step:
                on_step(step, batch_loss)
            step += 1
        now = group_digests(store)
        drifted = [g for g in frozen if now.get(g) != before.get(g)]
        if drifted:
            raise ContractError(f"frozen groups changed during {cfg.stage} epoch {epoch}: {drifted}")
        result.digests.append(now)
    log.info("%s: %d steps, final loss %.4f", cfg.stage, result.steps, result.losses[-1])
    return result


# language prior -------------------------------------------------------------------

def warmup_examples(
    bundle: ModelBundle,
    n: int,
    seed: int,
    styles: Sequence[str] = ("long_report", "short_report"),
) -> List[Example]:
    """In-memory volume/report pairs for the LM warm start; nothing touches disk."""
    from .synth_corpus import DESK_SPACING, render_volume, report_text, sample_findings
    from .volume_prep import prepare_field, to_hounsfield

    dims = bundle.config.encoder.input_dims
    prep = PrepConfig(target_spacing=DESK_SPACING, target_dims=dims)
    out = []
    for i in range(n):
        findings = sample_findings(np.random.default_rng([seed, 104729, i]), dims)
        vol = render_volume(findings, dims)
        values = prepare_field(to_hounsfield(vol), vol.spacing_mm, prep)
        out.append(Example(f"warm{i:05d}", bundle.encode(values[None]), report_text(findings, styles[i % len(styles)], dims)))
    return out


def warm_start_lm(
    bundle: ModelBundle,
    vocab: Vocab,
    examples: Sequence[Example],
    steps: int = 6000,
    lr_max: float = 3e-3,
    seed: int = 0,
) -> List[float]:
    """Stand-in for a pretrained LM: train the base LM with a throwaway projector.

    The output head stays at its initial value. Training it on words the model
    cannot yet tell apart pulls their rows together, and a frozen head with
    near-identical rows caps how confident any adapter can make it. The projector is re-initialized afterwards, so the stages that
    follow still have to learn the visual projection from scratch.
    """
    if not examples:
        raise DataError("warm start needs at least one example")
    from .adapter import init_projector

    store = bundle.store
    trunk = ["lm.tok_emb", "lm.pos_emb", "lm.ln_f"] + [f"lm.block{i}" for i in range(bundle.config.lm.depth)]
    store.set_trainable(trunk + ["projector"])
    opt = Adam(store, lr_max, steps, warmup_steps_for(steps))
    rng = np.random.default_rng([seed, 31])
    losses = []
    for _ in range(steps):
        ex = examples[int(rng.integers(len(examples)))]
        sample = assemble_prompt(vocab, choose_instruction(rng), ex.report, training=True)
        opt.zero_grad()
        loss = sample_loss(bundle, ex.grid, sample)
        loss.backward()
        clip_grad_norm(store.trainable(), 1.0)
        opt.step()
        losses.append(loss.item())
    fresh = ParamStore()
    init_projector(fresh, bundle.config.adapter, bundle.config.encoder.embed_dim, np.random.default_rng([seed, 37]))
    store.load_values_from(fresh, fresh.names())
    store.set_trainable(())
    return losses


@dataclass(frozen=True)
class WarmStartConfig:
    examples: int = 600
    steps: int = 6000
    lr_max: float = 3e-3
    seed: int = 99

    def validate(self) -> "WarmStartConfig":
        if self.examples < 1 or self.steps < 1 or not self.lr_max > 0:
            raise ConfigError("warm start needs examples >= 1, steps >= 1 and lr_max > 0")
        return self


def standard_vocab(manifests: Sequence[Manifest] = ()) -> Vocab:
    """Every word the generator can emit, the prompt set, and any extra manifest reports."""
    texts = vocabulary_texts() + list(PROMPTS) + [SYSTEM_MESSAGE]
    for m in manifests:
        texts += [r.report for r in m.records]
    return build_vocab(texts)


def build_base(config: ModelConfig, vocab: Vocab, seed: int = 0, warm: WarmStartConfig = WarmStartConfig()) -> ModelBundle:
    """Fresh encoder/projector/LoRA plus a warm-started, frozen base LM."""
    warm.validate()
    if config.lm.vocab_size != len(vocab):
        raise ConfigError(f"LM vocab_size {config.lm.vocab_size} != vocabulary size {len(vocab)}")
    bundle = ModelBundle.build(config, seed=seed)
    examples = warmup_examples(bundle, warm.examples, seed=warm.seed)
    losses = warm_start_lm(bundle, vocab, examples, steps=warm.steps, lr_max=warm.lr_max, seed=seed)
    log.info("warm start: %d steps, mean loss over last 10%% %.4f", warm.steps, float(np.mean(losses[-max(1, warm.steps // 10):])))
    return bundle


# generation and evaluation ------------------------------------------------------------

def generate_report(
    bundle: ModelBundle,
    vocab: Vocab,
    grid: Tensor,
    temperature: float = 0.7,
    seed: int = 0,
    instruction: str = PROMPTS[0],
    max_new: int = 128,
) -> str:
    sample = assemble_prompt(vocab, instruction)
    ids = bundle.generate(sample.token_ids, grid, temperature=temperature, max_new=max_new, seed=seed)
    return vocab.decode(ids)


def evaluate_examples(
    bundle: ModelBundle,
    vocab: Vocab,
    examples: Sequence[Example],
    temperature: float = 0.7,
    seed: int = 0,
    metadata: Optional[Mapping[str, object]] = None,
) -> EvalReport:
    gens = {}
    for k, ex in enumerate(sorted(examples, key=lambda e: e.id)):
        gens[ex.id] = generate_report(bundle, vocab, ex.grid, temperature, seed=seed * 100003 + k)
    refs = {ex.id: ex.report for ex in examples}
    meta = {"temperature": temperature, "seed": seed}
    meta.update(metadata or {})
    return evaluate_pairs(refs, gens, meta)


# strategies -----------------------------------------------------------------

@dataclass
class StrategyResult:
    plan: StrategyPlan
    bundle: ModelBundle
    report: EvalReport
    stage_results: List[StageResult]


def run_strategy(
    plan: StrategyPlan,
    corpora: Mapping[str, Manifest],
    base: ModelBundle,
    vocab: Vocab,
    seed: int = 0,
    stage_overrides: Optional[Mapping[str, StageConfig]] = None,
    eval_corpus: str = "private",
    eval_split: str = "val",
    temperature: float = 0.7,
    out_dir=None,
    snapshot: Optional[Mapping[str, object]] = None,
) -> StrategyResult:
    """Execute the plan's phases in order on a copy of ``base`` and score the held-out split."""
    missing = [c for c in plan.corpora() + [eval_corpus] if c not in corpora]
    if missing:
        raise ConfigError(f"strategy {plan.name} needs corpora {missing} which were not supplied")
    bundle = ModelBundle(base.config, base.store.copy())
    stage_overrides = stage_overrides or {}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        meta = {"plan": plan.name, "phases": [asdict(p) for p in plan.phases], "seed": seed,
                "temperature": temperature, "eval": f"{eval_corpus}/{eval_split}",
                "stages": {k: asdict(v) for k, v in stage_overrides.items()}}
        meta.update(snapshot or {})
        (out / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    cache: Dict[Tuple[str, str], List[Example]] = {}

    def examples(corpus: str, split: str) -> List[Example]:
        if (corpus, split) not in cache:
            cache[corpus, split] = load_examples(bundle, corpora[corpus], split)
        return cache[corpus, split]

    results = []
    offset = 0
    loss_lines: List[str] = []
    for k, phase in enumerate(plan.phases):
        # an override replaces the whole stage config, epochs included
        cfg = stage_overrides.get(phase.stage) or (
            pretrain_stage(phase.epochs) if phase.stage == "pretrain" else finetune_stage(phase.epochs)
        )
        res = train_stage(bundle, examples(phase.corpus, "train"), vocab, cfg, seed=seed * 10 + k)
        loss_lines += [f"{offset + i}\t{v:.6f}" for i, v in enumerate(res.losses)]
        offset += res.steps
        results.append(res)
        if out is not None:
            bundle.save(out / f"phase{k + 1}_{phase.stage}_{phase.corpus}.ckpt")
    report = evaluate_examples(
        bundle, vocab, examples(eval_corpus, eval_split), temperature, seed,
        metadata={"label": plan.name, "corpus": f"{eval_corpus}/{eval_split}", "checkpoint": bundle.store.digest()[:16]},
    )
    if out is not None:
        (out / "loss.tsv").write_text("\n".join(loss_lines) + "\n", encoding="utf-8")
        report.save(out, label=plan.name)
    return StrategyResult(plan, bundle, report, results)
