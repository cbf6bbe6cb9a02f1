from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .adapter import AdapterConfig, adapt_tokens, init_projector, project
from .ct_encoder import EncoderConfig, encode, init_encoder
from .errors import ArgumentError
from .params import ParamStore
from .tensor_core import Tensor, no_grad
from .text_lm import LmConfig, LoraConfig, embed_ids, forward_lm, generate, init_lm, init_lora, splice_embeddings


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    lm: LmConfig = field(default_factory=LmConfig)
    lora: LoraConfig = field(default_factory=LoraConfig)

    def validate(self) -> "ModelConfig":
        self.encoder.validate()
        self.adapter.validate(self.encoder.grid)
        self.lm.validate()
        self.lora.validate()
        if self.adapter.d_llm != self.lm.d_model:
            raise ArgumentError(f"projector width {self.adapter.d_llm} != LM d_model {self.lm.d_model}")
        return self

    @property
    def num_visual_tokens(self) -> int:
        return self.adapter.num_tokens(self.encoder.grid)


class ModelBundle:
    """Encoder, projector, LM and LoRA parameters plus the composed forward pass."""

    def __init__(self, config: ModelConfig, store: ParamStore):
        self.config = config.validate()
        self.store = store

    @classmethod
    def build(cls, config: ModelConfig, seed: int = 0) -> "ModelBundle":
        config.validate()
        rng = np.random.default_rng(seed)
        store = ParamStore()
        init_encoder(store, config.encoder, rng)
        init_projector(store, config.adapter, config.encoder.embed_dim, rng)
        init_lm(store, config.lm, rng)
        init_lora(store, config.lm, config.lora, rng)
        # encoder weights stand in for a pretrained, frozen CT encoder
        for p in store.group("encoder"):
            p.frozen = True
        return cls(config, store)

    def astype(self, dtype) -> "ModelBundle":
        return ModelBundle(self.config, self.store.astype(dtype))

    @property
    def dtype(self):
        return self.store["lm.tok_emb"].dtype

    def encode(self, values: np.ndarray) -> Tensor:
        values = np.asarray(values, dtype=self.dtype)
        if any(not p.frozen for p in self.store.group("encoder")):
            return encode(values, self.store, self.config.encoder)
        with no_grad():
            return encode(values, self.store, self.config.encoder)

    def visual_tokens(self, grid: Tensor) -> Tensor:
        return project(adapt_tokens(grid, self.config.adapter.pool_kernel), self.store, self.config.adapter)

    def logits(self, token_ids: Sequence[int], grid: Optional[Tensor], lora: bool = True) -> Tensor:
        visual = self.visual_tokens(grid) if grid is not None else None
        emb = splice_embeddings(token_ids, self.store, visual)
        return forward_lm(emb, self.store, self.config.lm, self.config.lora if lora else None)

    def generate(
        self,
        prompt_ids: Sequence[int],
        grid: Optional[Tensor],
        temperature: float = 0.7,
        max_new: int = 64,
        seed: int = 0,
        lora: bool = True,
    ) -> List[int]:
        lora_cfg = self.config.lora if lora else None
        with no_grad():
            visual = self.visual_tokens(grid) if grid is not None else None
            prefix = splice_embeddings(prompt_ids, self.store, visual)
        return generate(
            prefix,
            lambda emb: forward_lm(emb, self.store, self.config.lm, lora_cfg),
            lambda ids: embed_ids(ids, self.store),
            temperature=temperature,
            max_new=max_new,
            seed=seed,
            max_len=self.config.lm.max_seq,
        )

    def save(self, path) -> None:
        self.store.save(path)

    def load_weights(self, path) -> None:
        loaded = ParamStore.load(path)
        self.store.load_values_from(loaded)
        for p in self.store:
            p.frozen = loaded.param(p.name).frozen
