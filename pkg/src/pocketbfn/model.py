"""The full generator network: embeddings, equivariant stack, feature
enhancement (bottleneck + cooperative attention), and output heads."""

from __future__ import annotations

from typing import Iterator, NamedTuple

import numpy as np

from . import autodiff as ad
from .config import ModelConfig
from .egnn import NetState, init_layer_weights, layer_forward
from .geometry import Complex, knn_edges
from .layers import init_linear, linear
from .mhca import attention_map, head_dim, init_mhca_weights, mhca_forward
from .msib import init_msib_weights, msib_forward


class ModelWeights:
    """All trainable tensors, grouped by component and addressable by path.

    Paths look like ``layers.2.crd_w2`` or ``mhca.0.wo``.
    """

    GROUPS = ("embed", "layers", "msib_p", "msib_m", "mhca", "head")

    def __init__(self, config: ModelConfig, groups: dict[str, list[dict[str, ad.Tensor]]]):
        self.config = config
        self.groups = groups

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator) -> "ModelWeights":
        head_dim(config.hidden_dim, config.n_heads)
        d = config.hidden_dim
        embed = {}
        embed["protein_w"], embed["protein_b"] = init_linear(rng, d, config.protein_types)
        embed["ligand_w"], embed["ligand_b"] = init_linear(rng, d, config.atom_types)
        layers = [init_layer_weights(rng, config) for _ in range(config.n_layers)]
        n_enh = config.n_layers if config.enhance_every_layer else 1
        msib_p = [init_msib_weights(rng, d, config.msib_ratios) for _ in range(n_enh)] if config.use_msib else []
        msib_m = [init_msib_weights(rng, d, config.msib_ratios) for _ in range(n_enh)] if config.use_msib else []
        mhca = ([init_mhca_weights(rng, d, config.n_heads, config.shared_gate) for _ in range(n_enh)]
                if config.use_mhca else [])
        head = {}
        head["w1"], head["b1"] = init_linear(rng, d, d)
        head["w2"], head["b2"] = init_linear(rng, config.atom_types, d)
        raw = {"embed": [embed], "layers": layers, "msib_p": msib_p, "msib_m": msib_m,
               "mhca": mhca, "head": [head]}
        return cls(config, {g: [{k: ad.parameter(v, name=k) for k, v in block.items()}
                                for block in raw[g]] for g in cls.GROUPS})

    def named_parameters(self) -> Iterator[tuple[str, ad.Tensor]]:
        for g in self.GROUPS:
            for i, block in enumerate(self.groups[g]):
                for name, t in block.items():
                    yield f"{g}.{i}.{name}", t

    def parameters(self) -> list[ad.Tensor]:
        return [t for _, t in self.named_parameters()]

    def get(self, path: str) -> ad.Tensor:
        g, i, name = path.split(".", 2)
        return self.groups[g][int(i)][name]

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.parameters())

    def state(self) -> dict[str, np.ndarray]:
        return {p: t.data for p, t in self.named_parameters()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        mine = dict(self.named_parameters())
        if set(mine) != set(state):
            missing, extra = set(mine) - set(state), set(state) - set(mine)
            raise KeyError(f"parameter mismatch: missing {sorted(missing)[:3]}, unexpected {sorted(extra)[:3]}")
        for p, arr in state.items():
            if mine[p].shape != arr.shape:
                raise ValueError(f"{p}: shape {arr.shape} != {mine[p].shape}")
            mine[p].data = np.array(arr, dtype=np.float64)

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.config, {g: [{k: ad.parameter(t.data.copy(), name=k) for k, t in b.items()}
                                              for b in self.groups[g]] for g in self.GROUPS})

    def zero_grad(self) -> None:
        ad.zero_grad(self.parameters())


class BackboneOutput(NamedTuple):
    x_hat: ad.Tensor       # [N_M, 3] predicted ligand coordinates
    logits: ad.Tensor      # [N_M, K] type logits
    h: ad.Tensor           # [N_P + N_M, d] final hidden features
    x: ad.Tensor           # [N_P + N_M, 3] final coordinates


def enhance(h: ad.Tensor, n_protein: int, weights: ModelWeights, block: int,
            taps: list | None = None) -> ad.Tensor:
    cfg = weights.config
    if not (cfg.use_msib or cfg.use_mhca):
        return h
    H_p = ad.slice_rows(h, 0, n_protein)
    H_m = ad.slice_rows(h, n_protein, h.shape[0])
    if cfg.use_msib:
        H_p = msib_forward(H_p, weights.groups["msib_p"][block], cfg.ln_eps)
        H_m = msib_forward(H_m, weights.groups["msib_m"][block], cfg.ln_eps)
    if cfg.use_mhca:
        if taps is not None:
            taps.append((H_p.data, H_m.data))
        H_p, H_m = mhca_forward(H_p, H_m, weights.groups["mhca"][block], cfg.ln_eps)
    return ad.concat([H_p, H_m], axis=0)


def backbone_forward(c: Complex, mu, theta_v, t: float, weights: ModelWeights,
                     taps: list | None = None) -> BackboneOutput:
    """Run the generator on pocket ``c`` (its ligand part is ignored) given
    the coordinate means ``mu [N_M, 3]`` and type simplex ``theta_v [N_M, K]``.

    The pocket should already be centered on its protein center of mass.
    If ``taps`` is a list, the ``(H_p, H_m)`` arrays entering each attention
    block are appended to it.
    """
    cfg = weights.config
    emb = weights.groups["embed"][0]
    n_p = c.n_protein
    mu = ad.constant(mu)
    theta_v = ad.constant(theta_v)
    n_m = mu.shape[0]
    if theta_v.shape != (n_m, cfg.atom_types):
        raise ad.DimensionError(f"theta_v shape {theta_v.shape} != ({n_m}, {cfg.atom_types})")
    h = ad.concat([linear(ad.constant(c.v_p), emb["protein_w"], emb["protein_b"]),
                   linear(theta_v, emb["ligand_w"], emb["ligand_b"])], axis=0)
    x = ad.concat([ad.constant(c.x_p), mu], axis=0)
    mol_mask = np.arange(n_p + n_m) >= n_p
    state = NetState(h, x, mol_mask)
    for l, lw in enumerate(weights.groups["layers"]):
        g = knn_edges(state.x.data, n_p, cfg.knn_k)
        state = layer_forward(state, g, t, lw, cfg, layer=l)
        if cfg.enhance_every_layer:
            state = NetState(enhance(state.h, n_p, weights, l, taps), state.x, mol_mask)
    if not cfg.enhance_every_layer:
        state = NetState(enhance(state.h, n_p, weights, 0, taps), state.x, mol_mask)
    head = weights.groups["head"][0]
    h_m = ad.slice_rows(state.h, n_p, n_p + n_m)
    logits = linear(ad.relu(linear(h_m, head["w1"], head["b1"])), head["w2"], head["b2"])
    x_hat = ad.slice_rows(state.x, n_p, n_p + n_m)
    return BackboneOutput(x_hat, logits, state.h, state.x)


def attention_maps(c: Complex, weights: ModelWeights, t: float = 1.0) -> list[list[np.ndarray]]:
    """Per block, per head ``[N_p, N_M]`` attention with the ligand of ``c``
    taken as a fully resolved belief (exact coordinates and one-hot types)."""
    if not weights.config.use_mhca:
        return []
    taps: list = []
    backbone_forward(c, c.x_m, c.v_m, t, weights, taps)
    w_blocks = weights.groups["mhca"]
    return [[attention_map(H_p, H_m, w_blocks[b], h).data for h in range(weights.config.n_heads)]
            for b, (H_p, H_m) in enumerate(taps)]
