"""Geometric quality of generated ligands: RMSD and steric clashes."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import Complex

DEFAULT_CLASH_THRESHOLD = 2.0
DEFAULT_RMSD_CUTOFF = 2.0


def rmsd(gen, ref) -> float:
    """Root-mean-square deviation with atoms paired by index, no alignment."""
    gen = np.asarray(gen, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if gen.shape != ref.shape:
        raise ValueError(f"atom count mismatch: {gen.shape} vs {ref.shape}")
    return float(np.sqrt(((gen - ref) ** 2).sum(axis=1).mean()))


def best_assignment(gen, ref) -> np.ndarray:
    """Permutation ``perm`` minimising ``sum |gen[perm[j]] - ref[j]|^2``."""
    gen = np.asarray(gen, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if gen.shape != ref.shape:
        raise ValueError(f"atom count mismatch: {gen.shape} vs {ref.shape}")
    cost = ((ref[:, None, :] - gen[None, :, :]) ** 2).sum(axis=-1)
    _, cols = linear_sum_assignment(cost)
    return cols


def matched_rmsd(gen, ref) -> float:
    """RMSD after pairing atoms by the optimal one-to-one assignment.

    Generated atom order is arbitrary, so this is the figure to use when
    comparing a sample to a reference ligand.
    """
    gen = np.asarray(gen, dtype=np.float64)
    return rmsd(gen[best_assignment(gen, ref)], ref)


def type_accuracy(gen_x, gen_types, ref_x, ref_types) -> float:
    perm = best_assignment(gen_x, ref_x)
    return float(np.mean(np.asarray(gen_types)[perm] == np.asarray(ref_types)))


def clash_count(c: Complex, threshold: float = DEFAULT_CLASH_THRESHOLD) -> int:
    """Protein-ligand atom pairs closer than ``threshold`` Angstrom."""
    if threshold <= 0:
        raise ValueError("clash threshold must be positive")
    d = np.linalg.norm(c.x_m[:, None, :] - c.x_p[None, :, :], axis=-1)
    return int((d < threshold).sum())


def rmsd_pass_rate(samples: Sequence, refs: Sequence, cutoff: float = DEFAULT_RMSD_CUTOFF,
                   matched: bool = False) -> float:
    if len(samples) != len(refs):
        raise ValueError(f"{len(samples)} samples for {len(refs)} references")
    if not samples:
        raise ValueError("no samples")
    fn = matched_rmsd if matched else rmsd
    return float(np.mean([fn(s, r) < cutoff for s, r in zip(samples, refs)]))


def report_rows(samples: Sequence[Complex], reference: Complex,
                clash_threshold: float = DEFAULT_CLASH_THRESHOLD,
                cutoff: float = DEFAULT_RMSD_CUTOFF) -> list[dict]:
    rows = []
    for s in samples:
        r = rmsd(s.x_m, reference.x_m)
        mr = matched_rmsd(s.x_m, reference.x_m)
        rows.append({"sample": s.name, "rmsd": r, "matched_rmsd": mr,
                     "clashes": clash_count(s, clash_threshold),
                     "rmsd_pass": int(r < cutoff), "matched_pass": int(mr < cutoff)})
    return rows
