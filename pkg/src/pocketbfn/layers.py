"""Small building blocks shared by the network modules.

Weight matrices follow the ``[out, in]`` convention, so a linear map is
``x @ W.T + b``.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


def init_linear(rng: np.random.Generator, n_out: int, n_in: int, bias: bool = True,
                gain: float = 1.0) -> tuple[np.ndarray, np.ndarray | None]:
    bound = gain / np.sqrt(n_in)
    w = rng.uniform(-bound, bound, size=(n_out, n_in))
    b = rng.uniform(-bound, bound, size=n_out) if bias else None
    return w, b


def linear(x: ad.Tensor, w: ad.Tensor, b: ad.Tensor | None = None) -> ad.Tensor:
    y = ad.matmul(x, ad.transpose(w))
    return y if b is None else ad.add(y, b)


def ffn(x: ad.Tensor, p: dict, prefix: str = "ffn") -> ad.Tensor:
    """affine -> ReLU -> affine, reading ``{prefix}_w1`` .. ``{prefix}_b2``."""
    hid = ad.relu(linear(x, p[f"{prefix}_w1"], p[f"{prefix}_b1"]))
    return linear(hid, p[f"{prefix}_w2"], p[f"{prefix}_b2"])


def init_ffn(rng, d: int, hidden: int, prefix: str = "ffn") -> dict[str, np.ndarray]:
    w1, b1 = init_linear(rng, hidden, d)
    w2, b2 = init_linear(rng, d, hidden)
    return {f"{prefix}_w1": w1, f"{prefix}_b1": b1, f"{prefix}_w2": w2, f"{prefix}_b2": b2}


def init_layer_norm(d: int, prefix: str = "ln") -> dict[str, np.ndarray]:
    return {f"{prefix}_g": np.ones(d), f"{prefix}_b": np.zeros(d)}


def time_features(t: float, n_freqs: int = 4) -> np.ndarray:
    """``[t, sin(2^k pi t), cos(2^k pi t) for k < n_freqs]``."""
    freqs = np.pi * 2.0 ** np.arange(n_freqs)
    return np.concatenate([[t], np.sin(freqs * t), np.cos(freqs * t)])
