"""3D patch encoder producing the B x T x H' x W' x D token grid."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .errors import ArgumentError
from .params import ParamStore, normal
from .tensor_core import Tensor, add, linear, reshape
from .transformer import block, init_block


@dataclass(frozen=True)
class EncoderConfig:
    input_dims: Tuple[int, int, int] = (24, 48, 48)
    patch: Tuple[int, int, int] = (3, 6, 6)
    embed_dim: int = 64
    depth: int = 1
    heads: int = 4

    def validate(self) -> "EncoderConfig":
        for name, (n, p) in zip("ZYX", zip(self.input_dims, self.patch)):
            if p <= 0 or n <= 0 or n % p:
                raise ArgumentError(f"encoder input axis {name}={n} not divisible by patch {p}")
        if self.embed_dim <= 0 or self.heads <= 0 or self.embed_dim % self.heads:
            raise ArgumentError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.depth < 0:
            raise ArgumentError("encoder depth must be >= 0")
        return self

    @property
    def grid(self) -> Tuple[int, int, int]:
        return tuple(n // p for n, p in zip(self.input_dims, self.patch))

    @property
    def num_patches(self) -> int:
        t, h, w = self.grid
        return t * h * w

    @property
    def patch_size(self) -> int:
        pt, ph, pw = self.patch
        return pt * ph * pw


FULL_ENCODER = EncoderConfig(input_dims=(240, 480, 480), patch=(15, 30, 30), embed_dim=512, depth=1, heads=8)


def _as_batch(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values)
    if values.ndim == 3:
        return values[None]
    if values.ndim == 4:
        return values
    raise ArgumentError(f"expected a [Z,Y,X] or [B,Z,Y,X] volume, got shape {values.shape}")


def patchify(values: np.ndarray, patch: Tuple[int, int, int]) -> np.ndarray:
    """[B,Z,Y,X] -> [B, T*H'*W', pt*ph*pw] with patches in (t, h, w) order, voxels z-major."""
    vol = _as_batch(values)
    b, z, y, x = vol.shape
    pt, ph, pw = patch
    if z % pt or y % ph or x % pw:
        raise ArgumentError(f"volume {(z, y, x)} not divisible by patch {patch}")
    t, h, w = z // pt, y // ph, x // pw
    blocks = vol.reshape(b, t, pt, h, ph, w, pw).transpose(0, 1, 3, 5, 2, 4, 6)
    return np.ascontiguousarray(blocks).reshape(b, t * h * w, pt * ph * pw)


def unpatchify(patches: np.ndarray, dims: Tuple[int, int, int], patch: Tuple[int, int, int]) -> np.ndarray:
    b = patches.shape[0]
    z, y, x = dims
    pt, ph, pw = patch
    t, h, w = z // pt, y // ph, x // pw
    blocks = patches.reshape(b, t, h, w, pt, ph, pw).transpose(0, 1, 4, 2, 5, 3, 6)
    return np.ascontiguousarray(blocks).reshape(b, z, y, x)


def sincos_positions(grid: Sequence[int], dim: int) -> np.ndarray:
    """Fixed 3D code: each axis gets its own channel block of sin/cos waves.

    Wave k along an axis of n cells is evaluated at (c + 0.5) * pi * (k + 1) / n,
    so the lowest wave already splits that axis into halves linearly.
    Leftover channels stay zero.
    """
    pe = np.zeros(tuple(grid) + (dim,))
    per = dim // len(grid)
    coords = np.meshgrid(*[np.arange(n) for n in grid], indexing="ij")
    for a, c in enumerate(coords):
        for k in range(per // 2):
            phase = (c + 0.5) * np.pi * (k + 1) / grid[a]
            pe[..., a * per + 2 * k] = np.sin(phase)
            pe[..., a * per + 2 * k + 1] = np.cos(phase)
    return pe.reshape(-1, dim)


def init_encoder(store: ParamStore, cfg: EncoderConfig, rng: np.random.Generator) -> None:
    cfg.validate()
    d = cfg.embed_dim
    store.add("encoder.patch_embed.w", normal(rng, (d, cfg.patch_size), std=cfg.patch_size ** -0.5))
    store.add("encoder.patch_embed.b", np.zeros(d))
    store.add("encoder.pos_embed", sincos_positions(cfg.grid, d))
    for i in range(cfg.depth):
        init_block(store, f"encoder.block{i}", d, rng)


def encode(values: np.ndarray, store: ParamStore, cfg: EncoderConfig) -> Tensor:
    """Prepared volume(s) -> token grid Tensor [B, T, H', W', D]."""
    vol = _as_batch(values)
    if tuple(vol.shape[1:]) != tuple(cfg.input_dims):
        raise ArgumentError(f"volume dims {vol.shape[1:]} differ from encoder input {cfg.input_dims}")
    w = store["encoder.patch_embed.w"]
    if w.shape != (cfg.embed_dim, cfg.patch_size):
        raise ArgumentError(f"patch embedding shape {w.shape} does not match config")
    dtype = w.dtype
    patches = Tensor(patchify(vol, cfg.patch).astype(dtype, copy=False))
    x = add(linear(patches, w, store["encoder.patch_embed.b"]), store["encoder.pos_embed"])
    for i in range(cfg.depth):
        x = block(x, store, f"encoder.block{i}", cfg.heads, causal=False)
    t, h, wd = cfg.grid
    return reshape(x, [vol.shape[0], t, h, wd, cfg.embed_dim])
