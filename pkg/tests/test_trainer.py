import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctgpt.errors import ArgumentError, ConfigError, ContractError, DataError
from ctgpt.model import ModelBundle
from ctgpt.synth_corpus import Manifest, ManifestRecord
from ctgpt.tensor_core import Tensor
from ctgpt.text_lm import PROMPTS
from ctgpt.trainer import (
    PLANS,
    Phase,
    StageConfig,
    StrategyPlan,
    WarmStartConfig,
    build_base,
    finetune_stage,
    group_digests,
    load_examples,
    masked_lm_loss,
    pretrain_stage,
    run_strategy,
    train_stage,
    warm_start_lm,
    warmup_examples,
)


def log_softmax(z):
    z = z - z.max(-1, keepdims=True)
    return z - np.log(np.exp(z).sum(-1, keepdims=True))


# loss -------------------------------------------------------------------------

def test_perfect_logits_give_near_zero_loss():
    ids = [1, 5, 6, 7]
    logits = np.full((1, 4, 8), -50.0)
    for pos, tgt in enumerate(ids[1:]):
        logits[0, pos, tgt] = 50.0
    assert masked_lm_loss(Tensor(logits), ids, [0, 1, 1, 1]).item() < 1e-12


def test_uniform_logits_give_log_vocab():
    loss = masked_lm_loss(Tensor(np.zeros((1, 5, 8))), [1, 2, 3, 4, 5], [0, 1, 1, 1, 1]).item()
    assert loss == pytest.approx(math.log(8), abs=1e-12)
    assert round(loss, 4) == 2.0794


def test_half_masked_answer_averages_remaining_half():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((1, 5, 8))
    ids = [1, 3, 6, 2, 7]
    lp = log_softmax(z[0])
    full = -np.mean([lp[p, ids[p + 1]] for p in range(4)])
    half = -np.mean([lp[p, ids[p + 1]] for p in range(2)])
    assert masked_lm_loss(Tensor(z), ids, [0, 1, 1, 1, 1]).item() == pytest.approx(full, abs=1e-12)
    assert masked_lm_loss(Tensor(z), ids, [0, 1, 1, 0, 0]).item() == pytest.approx(half, abs=1e-12)


@given(st.lists(st.integers(0, 1), min_size=2, max_size=12), st.integers(0, 1000))
def test_loss_is_mean_over_selected_targets(mask, seed):
    n = len(mask)
    if not any(mask[1:]):
        mask[-1] = 1
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((1, n, 6))
    ids = rng.integers(0, 6, n)
    lp = log_softmax(z[0])
    want = -np.mean([lp[p, ids[p + 1]] for p in range(n - 1) if mask[p + 1]])
    assert masked_lm_loss(Tensor(z), ids, mask).item() == pytest.approx(want, abs=1e-10)


def test_loss_errors():
    with pytest.raises(ArgumentError):
        masked_lm_loss(Tensor(np.zeros((1, 3, 4))), [1, 2, 3], [1, 0, 0])
    with pytest.raises(ArgumentError):
        masked_lm_loss(Tensor(np.zeros((1, 3, 4))), [1, 2], [0, 1])
    with pytest.raises(ArgumentError):
        masked_lm_loss(Tensor(np.zeros((1, 3, 4))), [1, 2, -200], [0, 1, 1])


# configs and plans ------------------------------------------------------------------

def test_plans_expand_as_documented():
    assert PLANS["T1"].phases == (Phase("pretrain", "public", 5), Phase("finetune", "private", 2))
    assert PLANS["T2"].phases == (Phase("pretrain", "private", 5), Phase("finetune", "private", 2))
    assert PLANS["T3"].phases == (Phase("pretrain", "public", 5), Phase("finetune", "public", 2))
    with pytest.raises(ConfigError):
        StrategyPlan.named("T4")


def test_stage_defaults_and_trainable_sets():
    pre, fin = pretrain_stage(), finetune_stage()
    assert (pre.lr_max, pre.epochs, pre.batch_size) == (1e-3, 5, 1)
    assert (fin.lr_max, fin.epochs) == (2e-4, 2)
    assert pre.trainable == ("projector",) and set(fin.trainable) == {"projector", "lora"}
    assert "encoder" in pre.frozen_groups() and "encoder" in fin.frozen_groups()


@pytest.mark.parametrize(
    "kw",
    [dict(stage="warmup"), dict(lr_max=0.0), dict(epochs=0), dict(batch_size=0), dict(warmup_frac=1.0),
     dict(grad_clip=0.0), dict(instruction="  ")],
)
def test_stage_config_validation(kw):
    args = dict(stage="pretrain", lr_max=1e-3, epochs=1)
    args.update(kw)
    with pytest.raises(ConfigError):
        StageConfig(**args).validate()


def test_warm_start_config_validation():
    with pytest.raises(ConfigError):
        WarmStartConfig(steps=0).validate()


# freeze contracts -------------------------------------------------------------------

@pytest.fixture
def examples(fresh_bundle, tiny_corpora):
    return load_examples(fresh_bundle, tiny_corpora["private"], "train")


def test_stage1_step_moves_only_projector(fresh_bundle, examples, vocab):
    before = group_digests(fresh_bundle.store)
    train_stage(fresh_bundle, examples, vocab, pretrain_stage(1), max_steps=1)
    after = group_digests(fresh_bundle.store)
    assert [g for g in before if before[g] != after[g]] == ["projector"]


def test_stage2_step_moves_projector_and_lora(fresh_bundle, examples, vocab):
    before = group_digests(fresh_bundle.store)
    train_stage(fresh_bundle, examples, vocab, finetune_stage(1), max_steps=1)
    after = group_digests(fresh_bundle.store)
    assert sorted(g for g in before if before[g] != after[g]) == ["lora", "projector"]


def test_frozen_drift_raises_contract_error(fresh_bundle, examples, vocab):
    def tamper(step, loss):
        fresh_bundle.store["lm.head.w"].data[0, 0] += 1.0

    with pytest.raises(ContractError):
        train_stage(fresh_bundle, examples, vocab, pretrain_stage(1), on_step=tamper, max_steps=2)


def test_fixed_instruction_is_used(fresh_bundle, examples, vocab, monkeypatch):
    import ctgpt.trainer as trainer

    seen = []
    real = trainer.assemble_prompt
    monkeypatch.setattr(trainer, "assemble_prompt", lambda v, ins, *a, **k: seen.append(ins) or real(v, ins, *a, **k))
    train_stage(fresh_bundle, examples, vocab, pretrain_stage(1, instruction=PROMPTS[2]), max_steps=3)
    assert seen == [PROMPTS[2]] * 3


def test_empty_corpus_and_missing_volume(fresh_bundle, vocab, tmp_path):
    with pytest.raises(DataError):
        train_stage(fresh_bundle, [], vocab, pretrain_stage(1))
    m = Manifest([ManifestRecord("x", "volumes/x.ctvl", "dense nodule.")], root=tmp_path)
    with pytest.raises(DataError):
        load_examples(fresh_bundle, m, "train")


# warm start -------------------------------------------------------------------------

def test_warm_start_keeps_head_and_resets_projector(fresh_bundle, vocab):
    b = fresh_bundle
    head = b.store["lm.head.w"].data.copy()
    block = b.store["lm.block0.attn.wq"].data.copy()
    ex = warmup_examples(b, 2, seed=1)
    losses = warm_start_lm(b, vocab, ex, steps=3, seed=0)
    assert len(losses) == 3
    assert np.array_equal(b.store["lm.head.w"].data, head)
    assert not np.array_equal(b.store["lm.block0.attn.wq"].data, block)
    assert not b.store.trainable()
    again = ModelBundle.build(b.config, seed=0)
    warm_start_lm(again, vocab, warmup_examples(again, 2, seed=1), steps=3, seed=0)
    assert again.store.digest() == b.store.digest()


def test_build_base_checks_vocab_size(fresh_bundle, vocab):
    from ctgpt.text_lm import build_vocab

    with pytest.raises(ConfigError):
        build_base(fresh_bundle.config, build_vocab(["just a few words"]), warm=WarmStartConfig(examples=2, steps=1))


# strategies -------------------------------------------------------------------------

def quick(plan, corpora, base, vocab, **kw):
    overrides = {"pretrain": pretrain_stage(1), "finetune": finetune_stage(1)}
    return run_strategy(PLANS[plan], corpora, base, vocab, stage_overrides=overrides, **kw)


def test_strategy_is_reproducible_and_writes_run_dir(fresh_bundle, tiny_corpora, vocab, tmp_path):
    a = quick("T1", tiny_corpora, fresh_bundle, vocab, seed=3, out_dir=tmp_path / "run")
    b = quick("T1", tiny_corpora, fresh_bundle, vocab, seed=3)
    assert a.report.means == b.report.means
    assert a.bundle.store.digest() == b.bundle.store.digest()
    files = sorted(p.name for p in (tmp_path / "run").iterdir())
    assert files == ["eval.json", "eval.tsv", "loss.tsv", "phase1_pretrain_public.ckpt",
                     "phase2_finetune_private.ckpt", "run.json"]
    lines = (tmp_path / "run/loss.tsv").read_text().splitlines()
    assert len(lines) == 16 and all(len(l.split("\t")) == 2 for l in lines)
    assert int(lines[-1].split("\t")[0]) == 15


def test_strategy_leaves_base_untouched(fresh_bundle, tiny_corpora, vocab):
    digest = fresh_bundle.store.digest()
    quick("T3", tiny_corpora, fresh_bundle, vocab)
    assert fresh_bundle.store.digest() == digest


def test_missing_corpus_is_config_error(fresh_bundle, tiny_corpora, vocab):
    with pytest.raises(ConfigError):
        quick("T1", {"public": tiny_corpora["public"]}, fresh_bundle, vocab)


# overfit loss curve -------------------------------------------------------------------

def test_overfit_loss_trends_down(overfit):
    losses = overfit["losses"]
    blocks = losses[: len(losses) // 100 * 100].reshape(-1, 100).mean(axis=1)
    assert np.all(np.diff(blocks) < 0)
    assert losses[-20:].mean() < 0.1 * losses[:20].mean()


@pytest.mark.xfail(strict=True, reason="batch-1 Adam noise: the 20-step moving average rises on ~40% of steps")
def test_overfit_moving_average_is_monotone(overfit):
    ma = np.convolve(overfit["losses"], np.ones(20) / 20, mode="valid")
    assert np.all(np.diff(ma) <= 0)
