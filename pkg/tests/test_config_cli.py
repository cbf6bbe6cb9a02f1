from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from ctgpt.cli import main
from ctgpt.config import RunConfig
from ctgpt.errors import ConfigError, PathError
from ctgpt.nlg_metrics import METRICS

DESK = Path(__file__).resolve().parents[1] / "configs" / "desk.toml"

TINY = """
[stage.pretrain]
epochs = 1
[stage.finetune]
epochs = 1
[warm_start]
examples = 4
steps = 5
[generation]
max_new = 24
[corpus.public]
style = "long_report"
n = 10
seed = 11
[corpus.private]
style = "short_report"
n = 10
seed = 12
[paths]
data_dir = "{root}/data"
out_dir = "{root}/runs"
base_checkpoint = "{root}/runs/base.ckpt"
vocab = "{root}/data/vocab.tsv"
"""


# config -------------------------------------------------------------------------------

def test_shipped_config_equals_defaults():
    assert replace(RunConfig.load(DESK), source=None) == RunConfig()


@pytest.mark.parametrize(
    "body,needle",
    [
        ("[volume]\ndims = [24, 48, 50]", "volume_dims.x"),
        ("[encoder]\npatch = [5, 6, 6]", "volume_dims.z"),
        ("[adapter]\npool_kernel = 3", "pool_kernel"),
        ("[encoder]\nembed_dim = 66", "encoder_heads"),
        ("[lm]\nheads = 5", "lm_heads"),
        ("[lm]\nmax_seq = 64", "max_seq"),
        ("[adapter]\nprojector_kind = \"mlp3\"", "projector_kind"),
        ("[strategy]\nname = \"T9\"", "strategy"),
        ("[lora]\ntargets = [\"wz\"]", "LoRA"),
        ("[stage.pretrain]\nlr_max = -1.0", "lr_max"),
        ("[volume]\nhu_min = 500.0", "hu_min"),
        ("[corpus.public]\nstyle = \"haiku\"\nn = 10\nseed = 0", "style"),
    ],
)
def test_constraint_violations_are_named(tmp_path, body, needle):
    path = tmp_path / "c.toml"
    path.write_text(body)
    with pytest.raises(ConfigError, match=needle):
        RunConfig.load(path)


@pytest.mark.parametrize("body", ["[volume]\ncolour = 1", "[extras]\na = 1", "[stage.warmup]\nepochs = 1",
                                  "[stage.pretrain]\nspeed = 1", "volume = [", "[warm_start]\nsize = 3"])
def test_unknown_or_malformed_input(tmp_path, body):
    path = tmp_path / "c.toml"
    path.write_text(body)
    with pytest.raises(ConfigError):
        RunConfig.load(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(PathError):
        RunConfig.load(tmp_path / "nope.toml")


def test_derived_model_config():
    cfg = RunConfig()
    m = cfg.model_config(90)
    assert m.num_visual_tokens == 64 and m.lm.vocab_size == 90 and m.adapter.d_llm == m.lm.d_model
    assert cfg.stage("finetune").lr_max == 2e-4


# command line --------------------------------------------------------------------------

def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.toml"
    cfg.write_text(TINY.format(root=root))
    assert run("gen-corpus", "--config", cfg) == 0
    assert run("build-vocab", "--config", cfg) == 0
    return root, cfg


def test_gen_corpus_and_vocab(ws):
    root, _ = ws
    for name in ("public", "private"):
        assert len((root / "data" / name / "manifest.jsonl").read_text().splitlines()) == 10
    assert (root / "data/vocab.tsv").read_text().startswith("<pad>\t0\n")


def test_prep_writes_arrays(ws, tmp_path):
    root, cfg = ws
    assert run("prep", "--config", cfg, "--input", root / "data/private/volumes", "--out", tmp_path) == 0
    arrays = sorted(tmp_path.glob("*.npy"))
    assert len(arrays) == 10
    x = np.load(arrays[0])
    assert x.shape == (24, 48, 48) and x.min() >= -1 and x.max() <= 1


def test_pretrain_then_finetune(ws, tmp_path):
    _, cfg = ws
    assert run("pretrain", "--config", cfg, "--out", tmp_path / "s1") == 0
    assert (tmp_path / "s1/pretrain_loss.tsv").read_text().count("\n") == 8
    assert run("finetune", "--config", cfg, "--out", tmp_path / "s2", "--checkpoint", tmp_path / "s1/pretrain.ckpt") == 0
    assert (tmp_path / "s2/finetune.ckpt").exists() and (tmp_path / "s2/config.json").exists()


def test_run_strategy_layout_and_rerun(ws, tmp_path, capsys):
    _, cfg = ws
    for out in ("a", "b"):
        assert run("run-strategy", "--config", cfg, "--plan", "T1", "--out", tmp_path / out) == 0
    a, b = tmp_path / "a/T1_seed0", tmp_path / "b/T1_seed0"
    assert sorted(p.name for p in a.glob("*.ckpt")) == ["phase1_pretrain_public.ckpt", "phase2_finetune_private.ckpt"]
    assert (a / "eval.tsv").read_text() == (b / "eval.tsv").read_text()
    assert (a / "eval.tsv").read_text().splitlines()[0].split("\t")[1:] == list(METRICS)


def test_generate_evaluate_sweep(ws, tmp_path, capsys):
    root, cfg = ws
    run("run-strategy", "--config", cfg, "--plan", "T2", "--out", tmp_path)
    ckpt = tmp_path / "T2_seed0/phase2_finetune_private.ckpt"
    volume = sorted((root / "data/private/volumes").glob("*.ctvl"))[0]
    capsys.readouterr()
    assert run("generate", "--config", cfg, "--checkpoint", ckpt, "--volume", volume, "--temperature", "0") == 0
    assert capsys.readouterr().out.strip()
    assert run("evaluate", "--config", cfg, "--checkpoint", ckpt, "--out", tmp_path / "ev") == 0
    assert (tmp_path / "ev/eval.json").exists()
    assert run("temp-sweep", "--config", cfg, "--checkpoint", ckpt, "--out", tmp_path / "sw") == 0
    rows = (tmp_path / "sw/sweep.tsv").read_text().splitlines()
    assert rows[0].split("\t") == ["Temperature", *METRICS]
    assert [r.split("\t")[0] for r in rows[1:]] == ["0.10", "0.30", "0.50", "0.70", "0.90"]
    first = (tmp_path / "sw/sweep.tsv").read_text()
    run("temp-sweep", "--config", cfg, "--checkpoint", ckpt, "--out", tmp_path / "sw")
    assert (tmp_path / "sw/sweep.tsv").read_text() == first


def test_gradcheck_command(ws, capsys):
    _, cfg = ws
    assert run("gradcheck", "--config", cfg, "--max-entries", "6") == 0
    out = capsys.readouterr().out
    assert "projector.w" in out and "FAIL" not in out


def test_exit_codes(ws, tmp_path):
    root, cfg = ws
    bad = tmp_path / "bad.toml"
    bad.write_text("[volume]\ndims = [25, 48, 48]")
    assert run("pretrain", "--config", bad) == 3
    assert run("evaluate", "--config", cfg, "--checkpoint", tmp_path / "none.ckpt") == 7
    assert run("finetune", "--config", cfg) == 2
    assert run("fly") == 2
    assert run("prep", "--config", cfg, "--input", tmp_path / "nothing") == 7
    empty = tmp_path / "empty.toml"
    empty.write_text(TINY.format(root=tmp_path))
    assert run("pretrain", "--config", empty) == 7
