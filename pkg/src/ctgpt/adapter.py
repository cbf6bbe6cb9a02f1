"""Token-grid adapter and the vision-to-language projector.

``adapt_tokens`` turns a [B, T, H', W', D] grid into [B, N, D] visual tokens by
permuting channels forward, average pooling the three grid axes, flattening
the pooled grid and moving the token axis back in front of the channels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .params import ParamStore, normal
from .tensor_core import Tensor, avg_pool3d, gelu, linear, permute, reshape

PROJECTOR_KINDS = ("linear", "mlp2")


@dataclass(frozen=True)
class AdapterConfig:
    pool_kernel: int = 2
    projector_kind: str = "linear"
    d_llm: int = 48
    bias: bool = True

    def validate(self, grid=None) -> "AdapterConfig":
        if self.projector_kind not in PROJECTOR_KINDS:
            raise ArgumentError(f"projector_kind must be one of {PROJECTOR_KINDS}, got {self.projector_kind!r}")
        if self.pool_kernel <= 0 or self.d_llm <= 0:
            raise ArgumentError("pool_kernel and d_llm must be positive")
        if grid is not None and any(g % self.pool_kernel for g in grid):
            raise ArgumentError(f"token grid {tuple(grid)} not divisible by pool kernel {self.pool_kernel}")
        return self

    def num_tokens(self, grid) -> int:
        k = self.pool_kernel
        t, h, w = grid
        return (t // k) * (h // k) * (w // k)


def channels_first(z: Tensor) -> Tensor:
    return permute(z, [0, 4, 1, 2, 3])


def pool(z: Tensor, kernel: int) -> Tensor:
    return avg_pool3d(z, kernel)


def flatten_grid(z: Tensor) -> Tensor:
    b, d = z.shape[:2]
    return reshape(z, [b, d, int(np.prod(z.shape[2:]))])


def tokens_first(z: Tensor) -> Tensor:
    return permute(z, [0, 2, 1])


def adapt_tokens(z: Tensor, kernel: int = 2) -> Tensor:
    if z.ndim != 5:
        raise ArgumentError(f"token grid must be rank 5 [B,T,H',W',D], got {z.shape}")
    if any(n % kernel for n in z.shape[1:4]):
        raise ArgumentError(f"token grid {z.shape[1:4]} not divisible by pool kernel {kernel}")
    return tokens_first(flatten_grid(pool(channels_first(z), kernel)))


def init_projector(store: ParamStore, cfg: AdapterConfig, d_in: int, rng: np.random.Generator) -> None:
    cfg.validate()
    d = cfg.d_llm
    if cfg.projector_kind == "linear":
        store.add("projector.w", normal(rng, (d, d_in)))
        if cfg.bias:
            store.add("projector.b", np.zeros(d))
    else:
        store.add("projector.fc1.w", normal(rng, (d, d_in)))
        store.add("projector.fc2.w", normal(rng, (d, d)))
        if cfg.bias:
            store.add("projector.fc1.b", np.zeros(d))
            store.add("projector.fc2.b", np.zeros(d))


def project(p: Tensor, store: ParamStore, cfg: AdapterConfig) -> Tensor:
    """[B, N, D] visual tokens -> [B, N, d_llm] language-aligned embeddings."""
    bias = (lambda name: store[name] if name in store else None)
    if cfg.projector_kind == "linear":
        w = store["projector.w"]
        if p.shape[-1] != w.shape[1]:
            raise ArgumentError(f"visual width {p.shape[-1]} does not match projector input {w.shape[1]}")
        return linear(p, w, bias("projector.b"))
    w1 = store["projector.fc1.w"]
    if p.shape[-1] != w1.shape[1]:
        raise ArgumentError(f"visual width {p.shape[-1]} does not match projector input {w1.shape[1]}")
    h = gelu(linear(p, w1, bias("projector.fc1.b")))
    return linear(h, store["projector.fc2.w"], bias("projector.fc2.b"))
