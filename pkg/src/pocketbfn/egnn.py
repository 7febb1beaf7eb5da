"""SE(3)-equivariant message passing over the pocket-ligand k-NN graph.

Hidden features are updated from invariant edge inputs (distances, edge
types, time), so they stay invariant. Coordinates move along neighbour
difference vectors weighted by an invariant scalar, so they rotate and
translate with the input. Protein rows are masked out of the move.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import ModelConfig
from .geometry import N_EDGE_TYPES, TypedGraph
from .layers import init_linear, linear, time_features

log = logging.getLogger(__name__)

DIST_EPS = 1e-12  # keeps d(dist)/dx finite when two atoms coincide (all ligand means start at 0)


@dataclass
class NetState:
    h: ad.Tensor
    x: ad.Tensor
    mol_mask: np.ndarray

    @property
    def n_protein(self) -> int:
        return int((~self.mol_mask).sum())


def distance_width(cfg: ModelConfig) -> int:
    return cfg.n_rbf if cfg.rbf_distances else 1


def init_layer_weights(rng: np.random.Generator, cfg: ModelConfig) -> dict[str, np.ndarray]:
    d = cfg.hidden_dim
    nd, ne, nt = distance_width(cfg), N_EDGE_TYPES, 1 + 2 * cfg.n_time_freqs
    fan_msg = 2 * d + nd + ne + nt
    w: dict[str, np.ndarray] = {}

    def block(prefix, n_out):
        bound = 1.0 / np.sqrt(fan_msg)
        for tag, n_in in (("i", d), ("j", d), ("d", nd), ("e", ne), ("t", nt)):
            w[f"{prefix}_{tag}"] = rng.uniform(-bound, bound, (n_out, n_in))
        w[f"{prefix}_b"] = rng.uniform(-bound, bound, n_out)

    # value MLP (first layer split by input block)
    block("msg", d)
    w["msg_w2"], w["msg_b2"] = init_linear(rng, d, d)
    # attention query from h_i; key from [h_j, e_ij]. A key term in h_i alone
    # would be constant over each softmax segment and carry no signal.
    w["att_q"], _ = init_linear(rng, d, d, bias=False)
    fan_key = d + ne
    for tag, n_in in (("j", d), ("e", ne)):
        w[f"att_k_{tag}"] = rng.uniform(-1, 1, (d, n_in)) / np.sqrt(fan_key)
    # scalar coordinate weight
    block("crd", d)
    w["crd_w2"], w["crd_b2"] = init_linear(rng, 1, d, gain=cfg.coord_init_gain)
    return w


def _split_input(h_dst, h_src, dfeat, efeat, tfeat, w, prefix):
    """First affine layer of an edge MLP on ``[h_i, h_j, dist, e_ij, t]``.

    Node blocks are projected per node and then gathered, which is the same
    product as projecting the concatenated edge input.
    """
    pre = ad.add(h_dst, h_src)
    pre = ad.add(pre, ad.matmul(dfeat, ad.transpose(w[f"{prefix}_d"])))
    pre = ad.add(pre, ad.matmul(efeat, ad.transpose(w[f"{prefix}_e"])))
    tbias = ad.reshape(ad.matmul(tfeat, ad.transpose(w[f"{prefix}_t"])), (-1,))
    return ad.add(ad.add(pre, tbias), w[f"{prefix}_b"])


def _gather_proj(h: ad.Tensor, weight, idx) -> ad.Tensor:
    return ad.take_rows(ad.matmul(h, ad.transpose(weight)), idx)


def edge_geometry(x: ad.Tensor, g: TypedGraph, cfg: ModelConfig):
    rel = ad.sub(ad.take_rows(x, g.src), ad.take_rows(x, g.dst))  # x_j - x_i
    dist = ad.sqrt(ad.add(ad.sum(ad.square(rel), axis=1), DIST_EPS))
    if cfg.rbf_distances:
        centers = np.linspace(0.0, cfg.rbf_max, cfg.n_rbf)
        dfeat = ad.rbf_expand(dist, centers, cfg.rbf_width)
    else:
        dfeat = ad.reshape(dist, (-1, 1))
    return rel, dfeat


def layer_forward(state: NetState, g: TypedGraph, t: float, w: dict, cfg: ModelConfig,
                  layer: int = 0) -> NetState:
    try:
        return _layer_forward(state, g, t, w, cfg)
    except ad.NumericError as exc:
        raise ad.NumericError(f"equivariant layer {layer}: {exc}") from exc


def _layer_forward(state: NetState, g: TypedGraph, t: float, w: dict, cfg: ModelConfig) -> NetState:
    h, x = state.h, state.x
    n = h.shape[0]
    d = cfg.hidden_dim
    rel, dfeat = edge_geometry(x, g, cfg)
    efeat = ad.constant(g.edge_features())
    tfeat = ad.constant(time_features(t, cfg.n_time_freqs)[None, :])

    pre = _split_input(_gather_proj(h, w["msg_i"], g.dst), _gather_proj(h, w["msg_j"], g.src),
                       dfeat, efeat, tfeat, w, "msg")
    values = linear(ad.relu(pre), w["msg_w2"], w["msg_b2"])
    if cfg.attention_messages:
        q = _gather_proj(h, w["att_q"], g.dst)
        k = ad.add(_gather_proj(h, w["att_k_j"], g.src), ad.matmul(efeat, ad.transpose(w["att_k_e"])))
        scores = ad.scale(ad.sum(ad.mul(q, k), axis=1), 1.0 / np.sqrt(d))
        values = ad.rowscale(values, ad.segment_softmax(scores, g.dst, n))
    h_new = ad.add(h, ad.scatter_rows(values, g.dst, n))

    pre_x = _split_input(_gather_proj(h_new, w["crd_i"], g.dst), _gather_proj(h_new, w["crd_j"], g.src),
                         dfeat, efeat, tfeat, w, "crd")
    phi = ad.reshape(linear(ad.relu(pre_x), w["crd_w2"], w["crd_b2"]), (-1,))
    delta = ad.scatter_rows(ad.rowscale(rel, phi), g.dst, n)
    if np.any((delta.data ** 2).sum(axis=1) > cfg.max_coord_step ** 2):
        log.info("coordinate step clipped to %.1f A", cfg.max_coord_step)
        delta = ad.clip_row_norm(delta, cfg.max_coord_step)
    mask = np.repeat(state.mol_mask[:, None].astype(np.float64), 3, axis=1)
    x_new = ad.add(x, ad.mul(delta, mask))
    return NetState(h_new, x_new, state.mol_mask)
