"""Central finite-difference checks of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad


@dataclass
class TensorCheck:
    name: str
    n_checked: int
    rel_error: float
    max_abs_error: float

    def ok(self, tol: float) -> bool:
        return self.rel_error <= tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``|a - n| / max(|a|, |n|)`` in the Euclidean norm over the checked entries."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < 1e-12:
        return float(np.linalg.norm(analytic - numeric))
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_gradients(loss_fn: Callable[[], ad.Tensor], params: Sequence[tuple[str, ad.Tensor]],
                    eps: float = 1e-5, max_entries: int | None = None,
                    rng: np.random.Generator | None = None) -> list[TensorCheck]:
    """Compare ``d loss / d p`` from backward with central differences.

    ``loss_fn`` must rebuild the graph from the current parameter values on
    every call and be deterministic. For tensors larger than ``max_entries``
    a random subset of entries is checked.
    """
    rng = rng or np.random.default_rng(0)
    tensors = [t for _, t in params]
    analytic = ad.gradients(loss_fn(), tensors)
    results = []
    for (name, t), g in zip(params, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        numeric = np.empty(idx.size)
        for n, j in enumerate(idx):
            orig = flat[j]
            flat[j] = orig + eps
            up = loss_fn().item()
            flat[j] = orig - eps
            down = loss_fn().item()
            flat[j] = orig
            numeric[n] = (up - down) / (2 * eps)
        a = g.reshape(-1)[idx]
        results.append(TensorCheck(name, idx.size, relative_error(a, numeric),
                                   float(np.max(np.abs(a - numeric))) if idx.size else 0.0))
    return results
