from __future__ import annotations

from typing import Callable, List, Optional, Sequence

import numpy as np

from ..errors import ArgumentError
from ..tensor_core import Tensor, concat, no_grad
from .vocab import EOS, STOP


def next_token_probs(logits: np.ndarray, temperature: float) -> np.ndarray:
    if temperature < 0:
        raise ArgumentError(f"temperature must be >= 0, got {temperature}")
    z = np.asarray(logits, dtype=np.float64)
    if temperature == 0:
        p = np.zeros_like(z)
        p[int(np.argmax(z))] = 1.0
        return p
    z = z / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def sample_next(logits: np.ndarray, temperature: float, rng: np.random.Generator) -> int:
    """Temperature 0 is argmax (ties -> lowest id); otherwise inverse-CDF sampling."""
    if temperature < 0:
        raise ArgumentError(f"temperature must be >= 0, got {temperature}")
    if temperature == 0:
        return int(np.argmax(logits))
    cdf = np.cumsum(next_token_probs(logits, temperature))
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(cdf) - 1))


def generate(
    prefix: Tensor,
    logits_fn: Callable[[Tensor], Tensor],
    embed_fn: Callable[[Sequence[int]], Tensor],
    temperature: float = 0.7,
    max_new: int = 64,
    seed: int = 0,
    stop_ids: Sequence[int] = (STOP, EOS),
    max_len: Optional[int] = None,
) -> List[int]:
    """Autoregressively extend ``prefix`` [1, L, d]; returns generated ids without the stop token."""
    if temperature < 0:
        raise ArgumentError(f"temperature must be >= 0, got {temperature}")
    if max_new < 1:
        raise ArgumentError("max_new must be >= 1")
    rng = np.random.default_rng(seed)
    out: List[int] = []
    seq = prefix
    with no_grad():
        for _ in range(max_new):
            if max_len is not None and seq.shape[1] >= max_len:
                break
            logits = logits_fn(seq).data[0, -1]
            tok = sample_next(logits, temperature, rng)
            if tok in stop_ids:
                break
            out.append(tok)
            seq = concat([seq, embed_fn([tok])], axis=1)
    return out
