"""Multi-head cooperative attention: protein context flows into the ligand.

For every head, ligand atoms attend over protein atoms (the softmax runs
down the protein axis, so each ligand column of the attention map is a
probability vector), the pooled protein context is gated by a sigmoid of
the ligand features, and lifted back to width ``d``. Heads are fused by
``W_o`` over the ``H * d`` concatenation. Protein features never see the
ligand.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .config import ConfigError
from .layers import ffn, init_ffn, init_layer_norm, init_linear


def head_dim(d: int, n_heads: int) -> int:
    if n_heads < 1 or d % n_heads:
        raise ConfigError(f"{n_heads} heads do not divide hidden width {d}")
    return d // n_heads


def init_mhca_weights(rng: np.random.Generator, d: int, n_heads: int = 8,
                      shared_gate: bool = False) -> dict[str, np.ndarray]:
    dh = head_dim(d, n_heads)
    w: dict[str, np.ndarray] = {}
    for h in range(n_heads):
        w[f"wp{h}"], _ = init_linear(rng, dh, d, bias=False)
        w[f"wl{h}"], _ = init_linear(rng, dh, d, bias=False)
        if not shared_gate:
            w[f"wg{h}"], _ = init_linear(rng, dh, d, bias=False)
        w[f"wu{h}"], _ = init_linear(rng, d, dh, bias=False)
    if shared_gate:
        w["wg"], _ = init_linear(rng, dh, d, bias=False)
    w["wo"], _ = init_linear(rng, d, n_heads * d, bias=False)
    w.update(init_layer_norm(d, "lig_ln"))
    w.update(init_ffn(rng, d, 2 * d, "lig_ffn"))
    w.update(init_layer_norm(d, "pro_ln"))
    w.update(init_ffn(rng, d, 2 * d, "pro_ffn"))
    return w


def n_heads_of(w: dict) -> int:
    return sum(1 for k in w if k.startswith("wp"))


def _gate_weight(w: dict, h: int):
    return w[f"wg{h}"] if f"wg{h}" in w else w["wg"]


def _scores(H_p, H_m, w, h):
    P = ad.matmul(H_p, ad.transpose(w[f"wp{h}"]))
    L = ad.matmul(H_m, ad.transpose(w[f"wl{h}"]))
    dh = P.shape[1]
    return P, ad.scale(ad.matmul(P, ad.transpose(L)), 1.0 / np.sqrt(dh))


def attention_map(H_p, H_m, w: dict, head: int) -> ad.Tensor:
    """Attention of head ``head`` as an ``[N_p, N_l]`` column-stochastic matrix."""
    if not 0 <= head < n_heads_of(w):
        raise IndexError(f"head {head} out of range for {n_heads_of(w)} heads")
    _, s = _scores(ad.constant(H_p), ad.constant(H_m), w, head)
    return ad.softmax_axis(s, axis=0)


def head_context(H_p, H_m, w: dict, h: int) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
    """``(C_h, G_h, U_h)`` for one head."""
    P, s = _scores(H_p, H_m, w, h)
    A = ad.softmax_axis(s, axis=0)
    C = ad.matmul(ad.transpose(A), P)
    G = ad.sigmoid(ad.matmul(H_m, ad.transpose(_gate_weight(w, h))))
    U = ad.matmul(ad.mul(C, G), ad.transpose(w[f"wu{h}"]))
    return C, G, U


def protein_path(H_p, w: dict, eps: float = 1e-5) -> ad.Tensor:
    return ffn(ad.layer_norm(H_p, w["pro_ln_g"], w["pro_ln_b"], eps), w, "pro_ffn")


def mhca_forward(H_p, H_m, w: dict, eps: float = 1e-5) -> tuple[ad.Tensor, ad.Tensor]:
    H_p, H_m = ad.constant(H_p), ad.constant(H_m)
    d = w["lig_ln_g"].shape[0]
    if H_p.shape[-1] != d or H_m.shape[-1] != d:
        raise ad.DimensionError(f"MHCA expects width {d}, got {H_p.shape} and {H_m.shape}")
    heads = [head_context(H_p, H_m, w, h)[2] for h in range(n_heads_of(w))]
    attended = ad.matmul(ad.concat(heads, axis=1), ad.transpose(w["wo"]))
    enhanced = ad.layer_norm(ad.add(attended, H_m), w["lig_ln_g"], w["lig_ln_b"], eps)
    return protein_path(H_p, w, eps), ffn(enhanced, w, "lig_ffn")
