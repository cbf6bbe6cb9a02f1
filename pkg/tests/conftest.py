import time

import numpy as np
import pytest
from hypothesis import settings

from ctgpt.model import ModelBundle, ModelConfig
from ctgpt.synth_corpus import generate_corpus
from ctgpt.text_lm import PROMPTS, LmConfig
from ctgpt.trainer import build_base, finetune_stage, load_examples, pretrain_stage, standard_vocab, train_stage

settings.register_profile("ctgpt", deadline=None, max_examples=40)
settings.load_profile("ctgpt")

# Overfit recipe shared by the trainer tests and acceptance criteria 8 and 9:
# 4 + 58 epochs over 8 records is 496 optimizer steps.
OVERFIT_STAGES = (
    pretrain_stage(4, 2e-2, instruction=PROMPTS[0]),
    finetune_stage(58, 2e-2, instruction=PROMPTS[0]),
)


@pytest.fixture(scope="session")
def vocab():
    return standard_vocab()


@pytest.fixture(scope="session")
def desk_config(vocab):
    return ModelConfig(lm=LmConfig(vocab_size=len(vocab)))


@pytest.fixture
def fresh_bundle(desk_config):
    return ModelBundle.build(desk_config, seed=0)


@pytest.fixture(scope="session")
def base(desk_config, vocab):
    """Warm-started base model; about two minutes on one core, built once per session."""
    return build_base(desk_config, vocab, seed=0)


@pytest.fixture(scope="session")
def tiny_corpora(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpora")
    return {
        "public": generate_corpus(10, "long_report", root / "public", seed=11),
        "private": generate_corpus(10, "short_report", root / "private", seed=12),
    }


@pytest.fixture(scope="session")
def overfit(base, vocab, tmp_path_factory):
    manifest = generate_corpus(10, "short_report", tmp_path_factory.mktemp("overfit"), seed=0)
    start = time.perf_counter()
    bundle = ModelBundle(base.config, base.store.copy())
    examples = load_examples(bundle, manifest, "train")
    results = [train_stage(bundle, examples, vocab, cfg, seed=0) for cfg in OVERFIT_STAGES]
    losses = np.array(results[0].losses + results[1].losses)
    return {"bundle": bundle, "examples": examples, "losses": losses, "results": results,
            "seconds": time.perf_counter() - start}


# acceptance summary ------------------------------------------------------------------

ACCEPTANCE = {}


def record_criterion(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])


def pytest_collection_modifyitems(items):
    # anything touching the warm-started base pays its two-minute build
    for item in items:
        if {"base", "overfit"} & set(getattr(item, "fixturenames", ())) or item.module.__name__.endswith("test_acceptance"):
            item.add_marker(pytest.mark.slow)
