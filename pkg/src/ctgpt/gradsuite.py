"""Finite-difference check of the full pipeline: encoder, adapter, splice, LM and masked loss."""
from __future__ import annotations

from dataclasses import replace
from typing import List, Optional, Sequence

import numpy as np

from .model import ModelBundle, ModelConfig
from .synth_corpus import DESK_SPACING, render_volume, report_text, sample_findings
from .tensor_core import default_dtype
from .tensor_core.gradcheck import GradCheckResult, check_gradients
from .text_lm import PROMPTS, Vocab, assemble_prompt
from .trainer import sample_loss
from .volume_prep import PrepConfig, prepare_volume


def pipeline_gradcheck(
    config: ModelConfig,
    vocab: Vocab,
    seed: int = 0,
    groups: Sequence[str] = ("projector", "lora"),
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_entries: Optional[int] = None,
) -> List[GradCheckResult]:
    """Compare backprop with central differences for every parameter under ``groups``.

    Runs in float64. LoRA ``B`` starts at zero in a fresh model, which would make
    the ``A`` gradient identically zero, so both are drawn at random here.
    Encoder parameters are checked with the encoder differentiated, i.e. its
    no-grad shortcut is bypassed when it is in ``groups``.
    """
    config = replace(config, lm=replace(config.lm, vocab_size=len(vocab))).validate()
    with default_dtype(np.float64):
        bundle = ModelBundle.build(config, seed=seed).astype(np.float64)
        rng = np.random.default_rng([seed, 5])
        for p in bundle.store.group("lora"):
            p.tensor.data[...] = rng.standard_normal(p.tensor.shape) * 0.1
        bundle.store.set_trainable(groups)
        dims = config.encoder.input_dims
        findings = sample_findings(np.random.default_rng([seed, 6]), dims)
        while not findings:
            findings = sample_findings(rng, dims)
        prep = PrepConfig(target_spacing=DESK_SPACING, target_dims=dims)
        values = prepare_volume(render_volume(findings, dims), prep).values[None]
        sample = assemble_prompt(vocab, PROMPTS[0], report_text(findings, "short_report", dims), training=True)
        encoder_live = any(not p.frozen for p in bundle.store.group("encoder"))
        fixed_grid = None if encoder_live else bundle.encode(values)

        def loss():
            grid = bundle.encode(values) if encoder_live else fixed_grid
            return sample_loss(bundle, grid, sample)

        leaves = {p.name: p.tensor for p in bundle.store.trainable()}
        return check_gradients(loss, leaves, eps=eps, tol=tol, max_entries=max_entries, rng=np.random.default_rng([seed, 7]))
