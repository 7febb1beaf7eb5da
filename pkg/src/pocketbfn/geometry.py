"""Pocket-ligand complexes, centering, and the typed k-nearest-neighbour graph."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

log = logging.getLogger(__name__)

# Edge types, named source-then-destination: PL carries a message from a
# protein atom into a ligand atom.
PP, LL, PL, LP = 0, 1, 2, 3
EDGE_TYPE_NAMES = ("PP", "LL", "PL", "LP")
N_EDGE_TYPES = 4


class ComplexError(ValueError):
    pass


def _check_one_hot(v: np.ndarray, what: str) -> None:
    if v.ndim != 2:
        raise ComplexError(f"{what} must be a 2-D one-hot matrix, got shape {v.shape}")
    ok = np.all((v == 0) | (v == 1), axis=1) & (v.sum(axis=1) == 1)
    if not ok.all():
        row = int(np.flatnonzero(~ok)[0])
        raise ComplexError(f"{what} row {row} is not one-hot")


@dataclass(frozen=True)
class Complex:
    """One protein pocket and one ligand, coordinates in Angstrom."""

    x_p: np.ndarray
    v_p: np.ndarray
    x_m: np.ndarray
    v_m: np.ndarray
    name: str = "complex"

    def __post_init__(self):
        for attr in ("x_p", "v_p", "x_m", "v_m"):
            object.__setattr__(self, attr, np.array(getattr(self, attr), dtype=np.float64))
        if self.x_p.ndim != 2 or self.x_p.shape[1] != 3 or self.x_p.shape[0] < 1:
            raise ComplexError(f"x_p must be [N_P, 3] with N_P >= 1, got {self.x_p.shape}")
        if self.x_m.ndim != 2 or self.x_m.shape[1] != 3 or self.x_m.shape[0] < 1:
            raise ComplexError(f"N_M must be >= 1 (x_m shape {self.x_m.shape})")
        if not (np.isfinite(self.x_p).all() and np.isfinite(self.x_m).all()):
            raise ComplexError("coordinates must be finite")
        _check_one_hot(self.v_p, "v_p")
        _check_one_hot(self.v_m, "v_m")
        if self.v_p.shape[0] != self.n_protein or self.v_m.shape[0] != self.n_ligand:
            raise ComplexError("feature and coordinate row counts differ")

    @property
    def n_protein(self) -> int:
        return self.x_p.shape[0]

    @property
    def n_ligand(self) -> int:
        return self.x_m.shape[0]

    @property
    def protein_types(self) -> int:
        return self.v_p.shape[1]

    @property
    def atom_types(self) -> int:
        return self.v_m.shape[1]

    @property
    def ligand_type_index(self) -> np.ndarray:
        return self.v_m.argmax(axis=1)

    @property
    def positions(self) -> np.ndarray:
        """All coordinates, protein rows first."""
        return np.concatenate([self.x_p, self.x_m], axis=0)

    def with_ligand(self, x_m, v_m=None) -> "Complex":
        return replace(self, x_m=x_m, v_m=self.v_m if v_m is None else v_m)

    def transformed(self, rot: np.ndarray, shift: np.ndarray) -> "Complex":
        """Apply ``x -> x @ rot.T + shift`` to every atom."""
        return replace(self, x_p=self.x_p @ rot.T + shift, x_m=self.x_m @ rot.T + shift)

    def __eq__(self, other):
        if not isinstance(other, Complex):
            return NotImplemented
        return (self.name == other.name
                and all(np.array_equal(getattr(self, a), getattr(other, a))
                        for a in ("x_p", "v_p", "x_m", "v_m")))

    __hash__ = None


def one_hot(index, width: int) -> np.ndarray:
    index = np.asarray(index, dtype=np.intp)
    out = np.zeros((index.shape[0], width))
    out[np.arange(index.shape[0]), index] = 1.0
    return out


def center_by_protein_com(c: Complex) -> Complex:
    """Translate the complex so the protein atoms have zero mean."""
    com = c.x_p.mean(axis=0)
    return replace(c, x_p=c.x_p - com, x_m=c.x_m - com)


def pairwise_distance(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)))


@dataclass(frozen=True)
class TypedGraph:
    """Directed edges ``src -> dst``; messages flow from neighbour to centre."""

    src: np.ndarray
    dst: np.ndarray
    etype: np.ndarray
    dist: np.ndarray
    n_nodes: int
    n_protein: int = field(default=0)

    @property
    def n_edges(self) -> int:
        return int(self.src.shape[0])

    @property
    def edges(self) -> list[tuple[int, int, str, float]]:
        return [(int(s), int(d), EDGE_TYPE_NAMES[t], float(r))
                for s, d, t, r in zip(self.src, self.dst, self.etype, self.dist)]

    def edge_features(self) -> np.ndarray:
        out = np.zeros((self.n_edges, N_EDGE_TYPES))
        out[np.arange(self.n_edges), self.etype] = 1.0
        return out

    def neighbours(self, i: int) -> list[int]:
        return [int(s) for s in self.src[self.dst == i]]


def edge_types(src: np.ndarray, dst: np.ndarray, n_protein: int) -> np.ndarray:
    sp = src < n_protein
    dp = dst < n_protein
    return np.select([sp & dp, ~sp & ~dp, sp & ~dp], [PP, LL, PL], default=LP).astype(np.intp)


_CLIP_WARNED: set[tuple[int, int]] = set()  # warn once per (k, graph size)


def knn_edges(pos: np.ndarray, n_protein: int, k: int) -> TypedGraph:
    """k-NN graph over raw coordinates ``pos`` (protein rows first)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    n = pos.shape[0]
    if n < 2:
        empty = np.zeros(0, dtype=np.intp)
        return TypedGraph(empty, empty, empty, np.zeros(0), n, n_protein)
    if k > n - 1:
        if (k, n) not in _CLIP_WARNED:
            _CLIP_WARNED.add((k, n))
            log.warning("k=%d exceeds %d available neighbours; clipping", k, n - 1)
        k = n - 1
    diff = pos[:, None, :] - pos[None, :, :]
    d2 = (diff ** 2).sum(axis=-1)
    np.fill_diagonal(d2, np.inf)
    # stable sort keeps the lower index first among equal distances
    nbr = np.argsort(d2, axis=1, kind="stable")[:, :k]
    dst = np.repeat(np.arange(n), k)
    src = nbr.reshape(-1)
    dist = np.sqrt(d2[dst, src])
    return TypedGraph(src.astype(np.intp), dst.astype(np.intp),
                      edge_types(src, dst, n_protein), dist, n, n_protein)


def build_knn_graph(c: Complex, k: int = 16) -> TypedGraph:
    return knn_edges(c.positions, c.n_protein, k)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform proper rotation from the QR decomposition of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
