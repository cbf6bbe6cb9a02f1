"""Decoder-only LM, LoRA adapters and visual-token splicing."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from ..errors import ArgumentError
from ..params import ParamStore, normal
from ..tensor_core import Tensor, add, concat, embedding, layer_norm, linear, take_rows
from ..transformer import LINEARS, block, init_block
from .vocab import IMAGE_SENTINEL


@dataclass(frozen=True)
class LmConfig:
    vocab_size: int = 128
    d_model: int = 48
    depth: int = 2
    heads: int = 4
    max_seq: int = 256

    def validate(self) -> "LmConfig":
        if self.d_model <= 0 or self.heads <= 0 or self.d_model % self.heads:
            raise ArgumentError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.vocab_size <= 5 or self.max_seq <= 0 or self.depth < 0:
            raise ArgumentError("vocab_size must exceed the specials; max_seq positive; depth >= 0")
        return self


@dataclass(frozen=True)
class LoraConfig:
    rank: int = 8
    alpha: float = 16.0
    targets: Tuple[str, ...] = ("wq", "wv")

    def validate(self) -> "LoraConfig":
        if self.rank < 1 or not self.alpha > 0:
            raise ArgumentError(f"LoRA needs rank >= 1 and alpha > 0, got r={self.rank} alpha={self.alpha}")
        bad = set(self.targets) - set(LINEARS)
        if bad:
            raise ArgumentError(f"unknown LoRA targets {sorted(bad)}")
        return self

    @property
    def scale(self) -> float:
        return self.alpha / self.rank


def init_lm(store: ParamStore, cfg: LmConfig, rng: np.random.Generator) -> None:
    cfg.validate()
    d = cfg.d_model
    store.add("lm.tok_emb", normal(rng, (cfg.vocab_size, d)))
    store.add("lm.pos_emb", normal(rng, (cfg.max_seq, d)))
    for i in range(cfg.depth):
        init_block(store, f"lm.block{i}", d, rng)
    store.add("lm.ln_f.g", np.ones(d))
    store.add("lm.ln_f.b", np.zeros(d))
    # unit-norm rows keep every word separable by a wide logit margin
    store.add("lm.head.w", normal(rng, (cfg.vocab_size, d), std=d ** -0.5))


def init_lora(store: ParamStore, lm_cfg: LmConfig, cfg: LoraConfig, rng: np.random.Generator) -> None:
    """A ~ N(0, 1/fan_in), B = 0, so the adapted model starts identical to the base."""
    cfg.validate()
    for i in range(lm_cfg.depth):
        for w in cfg.targets:
            d_out, d_in = store[f"lm.block{i}.{LINEARS[w][0]}"].shape
            store.add(f"lora.block{i}.{w}.A", normal(rng, (cfg.rank, d_in), std=1.0 / np.sqrt(d_in)))
            store.add(f"lora.block{i}.{w}.B", np.zeros((d_out, cfg.rank)))


def embed_ids(ids: Sequence[int], store: ParamStore) -> Tensor:
    return embedding(store["lm.tok_emb"], np.asarray(ids, dtype=np.int64)[None])


def splice_embeddings(token_ids: Sequence[int], store: ParamStore, visual: Optional[Tensor] = None) -> Tensor:
    """Embed text ids and splice ``visual`` [1, N, d] where the image sentinel sits."""
    ids = [int(i) for i in token_ids]
    n_sent = ids.count(IMAGE_SENTINEL)
    if visual is None:
        if n_sent:
            raise ArgumentError("image sentinel present but no visual tokens supplied")
        return embed_ids(ids, store)
    if n_sent != 1:
        raise ArgumentError(f"expected exactly one image sentinel, found {n_sent}")
    if visual.ndim != 3 or visual.shape[0] != 1 or visual.shape[2] != store["lm.tok_emb"].shape[1]:
        raise ArgumentError(f"visual tokens {visual.shape} incompatible with embedding width")
    i = ids.index(IMAGE_SENTINEL)
    parts = []
    if i > 0:
        parts.append(embed_ids(ids[:i], store))
    parts.append(visual)
    if i + 1 < len(ids):
        parts.append(embed_ids(ids[i + 1:], store))
    return concat(parts, axis=1) if len(parts) > 1 else parts[0]


def forward_lm(
    embeddings: Tensor,
    store: ParamStore,
    cfg: LmConfig,
    lora: Optional[LoraConfig] = None,
) -> Tensor:
    """[1, L, d] embeddings -> [1, L, vocab] logits through the causal stack."""
    length = embeddings.shape[1]
    if length > cfg.max_seq:
        raise ArgumentError(f"sequence length {length} exceeds max_seq {cfg.max_seq}")
    x = add(embeddings, take_rows(store["lm.pos_emb"], 0, length, axis=0))
    scale = lora.scale if lora is not None else 0.0
    for i in range(cfg.depth):
        lp = f"lora.block{i}" if lora is not None else None
        x = block(x, store, f"lm.block{i}", cfg.heads, causal=True, lora_prefix=lp, lora_scale=scale)
    x = layer_norm(x, store["lm.ln_f.g"], store["lm.ln_f.b"])
    return linear(x, store["lm.head.w"])
