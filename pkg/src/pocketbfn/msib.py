"""Multi-scale information bottleneck.

Three parallel encoder/decoder pathways squeeze the feature dimension to
``ceil(r * d)`` for each compression ratio ``r`` and decode back to ``d``.
Decoded pathways are added onto the input, then normalized and passed
through a two-layer feed-forward net. Rows (atoms) never mix.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .layers import ffn, init_ffn, init_layer_norm, init_linear, linear

DEFAULT_RATIOS = (0.125, 0.25, 0.5)


def bottleneck_widths(d: int, ratios: Sequence[float] = DEFAULT_RATIOS) -> list[int]:
    widths = [max(1, math.ceil(r * d - 1e-9)) for r in ratios]
    for r, m in zip(ratios, widths):
        if not 1 <= m < d:
            raise ValueError(f"ratio {r} gives bottleneck width {m}, need 1 <= width < {d}")
    return widths


def init_msib_weights(rng: np.random.Generator, d: int,
                      ratios: Sequence[float] = DEFAULT_RATIOS) -> dict[str, np.ndarray]:
    w: dict[str, np.ndarray] = {}
    for i, m in enumerate(bottleneck_widths(d, ratios)):
        w[f"enc_w{i}"], w[f"enc_b{i}"] = init_linear(rng, m, d)
        w[f"dec_w{i}"], w[f"dec_b{i}"] = init_linear(rng, d, m)
    w.update(init_layer_norm(d))
    w.update(init_ffn(rng, d, 2 * d))
    return w


def n_pathways(w: dict) -> int:
    return sum(1 for k in w if k.startswith("enc_w"))


def pathway(H: ad.Tensor, w: dict, i: int) -> ad.Tensor:
    """Decoded output of pathway ``i``; elementwise non-negative."""
    z_enc = ad.relu(linear(H, w[f"enc_w{i}"], w[f"enc_b{i}"]))
    z_proc = ad.relu(z_enc)  # idempotent on a ReLU output, kept to mirror the pathway definition
    return ad.relu(linear(z_proc, w[f"dec_w{i}"], w[f"dec_b{i}"]))


def msib_fusion(H: ad.Tensor, w: dict) -> ad.Tensor:
    d = w["ln_g"].shape[0]
    if H.shape[-1] != d:
        raise ad.DimensionError(f"MSIB expects feature width {d}, got {H.shape}")
    fused = H
    for i in range(n_pathways(w)):
        fused = ad.add(fused, pathway(H, w, i))
    return fused


def msib_forward(H: ad.Tensor, w: dict, eps: float = 1e-5) -> ad.Tensor:
    fused = msib_fusion(H, w)
    normed = ad.layer_norm(fused, w["ln_g"], w["ln_b"], eps)
    return ffn(normed, w)
