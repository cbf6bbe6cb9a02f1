"""Pre-norm transformer block shared by the CT encoder and the decoder LM."""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .params import ParamStore, normal
from .tensor_core import Tensor, add, gelu, layer_norm, linear, matmul, mul, permute, reshape, softmax


def init_block(store: ParamStore, prefix: str, d: int, rng: np.random.Generator, mlp_ratio: int = 4) -> None:
    """Weights drawn with std 1/sqrt(fan_in); at small widths a fixed 0.02 leaves attention near uniform."""
    hidden = mlp_ratio * d
    store.add(f"{prefix}.ln1.g", np.ones(d))
    store.add(f"{prefix}.ln1.b", np.zeros(d))
    for w in ("wq", "wk", "wv", "wo"):
        store.add(f"{prefix}.attn.{w}", normal(rng, (d, d), std=d ** -0.5))
        store.add(f"{prefix}.attn.b{w[1]}", np.zeros(d))
    store.add(f"{prefix}.ln2.g", np.ones(d))
    store.add(f"{prefix}.ln2.b", np.zeros(d))
    store.add(f"{prefix}.mlp.fc1.w", normal(rng, (hidden, d), std=d ** -0.5))
    store.add(f"{prefix}.mlp.fc1.b", np.zeros(hidden))
    store.add(f"{prefix}.mlp.fc2.w", normal(rng, (d, hidden), std=hidden ** -0.5))
    store.add(f"{prefix}.mlp.fc2.b", np.zeros(d))


# LoRA target name -> (weight, bias) suffixes inside a block
LINEARS = {
    "wq": ("attn.wq", "attn.bq"),
    "wk": ("attn.wk", "attn.bk"),
    "wv": ("attn.wv", "attn.bv"),
    "wo": ("attn.wo", "attn.bo"),
    "fc1": ("mlp.fc1.w", "mlp.fc1.b"),
    "fc2": ("mlp.fc2.w", "mlp.fc2.b"),
}


def _adapted(x: Tensor, store: ParamStore, prefix: str, w: str, lora_prefix: Optional[str], lora_scale: float) -> Tensor:
    wname, bname = LINEARS[w]
    out = linear(x, store[f"{prefix}.{wname}"], store[f"{prefix}.{bname}"])
    if lora_prefix is not None and f"{lora_prefix}.{w}.A" in store:
        # (W + s*B*A) x == W x + s * B (A x)
        delta = linear(linear(x, store[f"{lora_prefix}.{w}.A"]), store[f"{lora_prefix}.{w}.B"])
        out = add(out, mul(delta, lora_scale))
    return out


def attention(
    x: Tensor,
    store: ParamStore,
    prefix: str,
    heads: int,
    causal: bool,
    lora_prefix: Optional[str] = None,
    lora_scale: float = 0.0,
) -> Tensor:
    b, n, d = x.shape
    dh = d // heads
    q = _adapted(x, store, prefix, "wq", lora_prefix, lora_scale)
    k = _adapted(x, store, prefix, "wk", lora_prefix, lora_scale)
    v = _adapted(x, store, prefix, "wv", lora_prefix, lora_scale)

    def split(t):
        return permute(reshape(t, [b, n, heads, dh]), [0, 2, 1, 3])

    q, k, v = split(q), split(k), split(v)
    scores = mul(matmul(q, permute(k, [0, 1, 3, 2])), 1.0 / math.sqrt(dh))
    mask = np.tril(np.ones((n, n), dtype=bool)) if causal else None
    ctx = matmul(softmax(scores, axis=-1, mask=mask), v)
    ctx = reshape(permute(ctx, [0, 2, 1, 3]), [b, n, d])
    return _adapted(ctx, store, prefix, "wo", lora_prefix, lora_scale)


def block(
    x: Tensor,
    store: ParamStore,
    prefix: str,
    heads: int,
    causal: bool,
    lora_prefix: Optional[str] = None,
    lora_scale: float = 0.0,
) -> Tensor:
    h = layer_norm(x, store[f"{prefix}.ln1.g"], store[f"{prefix}.ln1.b"])
    x = add(x, attention(h, store, prefix, heads, causal, lora_prefix, lora_scale))
    h = layer_norm(x, store[f"{prefix}.ln2.g"], store[f"{prefix}.ln2.b"])
    h = gelu(_adapted(h, store, prefix, "fc1", lora_prefix, lora_scale))
    return add(x, _adapted(h, store, prefix, "fc2", lora_prefix, lora_scale))
