"""Central finite-difference checks against analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckResult:
    name: str
    rel_error: float
    checked: int
    passed: bool


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Norm-wise relative error.

    The denominator never drops below ``floor``: a gradient that is exactly zero
    (a key bias under softmax, say) is compared against finite-difference
    round-off of order 1e-12, which is agreement, not a 100% error.
    """
    diff = float(np.linalg.norm(analytic - numeric))
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), floor)
    return diff / scale


def numerical_grad(
    loss_fn: Callable[[], float],
    array: np.ndarray,
    eps: float = 1e-5,
    indices: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Central differences of ``loss_fn`` w.r.t. entries of ``array`` (mutated and restored in place)."""
    flat = array.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    for i in range(flat.size) if indices is None else indices:
        orig = flat[i]
        flat[i] = orig + eps
        up = loss_fn()
        flat[i] = orig - eps
        down = loss_fn()
        flat[i] = orig
        out[i] = (up - down) / (2 * eps)
    return out.reshape(array.shape)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    leaves: Dict[str, Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> List[GradCheckResult]:
    """Compare backprop gradients of ``loss_fn()`` with central differences for each leaf.

    With ``max_entries`` set, a random subset of coordinates per leaf is checked.
    """
    for t in leaves.values():
        t.zero_grad()
    loss_fn().backward()
    analytic = {name: t.grad.copy() for name, t in leaves.items()}

    def scalar() -> float:
        return float(loss_fn().data)

    rng = rng or np.random.default_rng(0)
    results = []
    for name, t in leaves.items():
        n = t.numel()
        if max_entries is not None and n > max_entries:
            idx = np.sort(rng.choice(n, size=max_entries, replace=False))
        else:
            idx = np.arange(n)
        num = numerical_grad(scalar, t.data, eps=eps, indices=idx)
        a = analytic[name].reshape(-1)[idx]
        err = relative_error(a, num.reshape(-1)[idx])
        results.append(GradCheckResult(name, err, len(idx), err < tol))
    return results
