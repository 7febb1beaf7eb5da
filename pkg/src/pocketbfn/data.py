"""Seeded synthetic pocket-ligand complexes and their text file format.

File format (UTF-8, one complex per file)::

    complex <name> <N_P> <N_M> <D_P> <K>
    P <x> <y> <z> <type_index>        # N_P lines
    L <x> <y> <z> <type_index>        # N_M lines

Coordinates are written with 17 significant digits, which round-trips
float64 exactly. A dataset directory holds the complex files plus
``manifest.txt`` listing one file name per line.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Complex, ComplexError, one_hot

DATA_STREAM = 0
MIN_SEPARATION = 0.8
MANIFEST = "manifest.txt"


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    count: int = 64
    seed: int = 0
    pocket_atoms: tuple[int, int] = (20, 32)
    ligand_atoms: tuple[int, int] = (4, 6)
    shell_radius: float = 6.0
    ligand_spread: float = 1.5
    protein_types: int = 6
    atom_types: int = 6

    def __post_init__(self):
        lo, hi = self.pocket_atoms
        if not 1 <= lo <= hi:
            raise ValueError(f"bad pocket atom range {self.pocket_atoms}")
        lo, hi = self.ligand_atoms
        if not 1 <= lo <= hi:
            raise ValueError(f"bad ligand atom range {self.ligand_atoms}")
        if not self.shell_radius > self.ligand_spread > 0:
            raise ValueError("need shell_radius > ligand_spread > 0")
        if self.count < 1 or self.protein_types < 1 or self.atom_types < 1:
            raise ValueError("count and vocabulary sizes must be positive")


def _place(rng, propose, existing: np.ndarray, n: int, what: str, tries: int = 10_000) -> np.ndarray:
    pts = list(existing)
    out = []
    for _ in range(n):
        for _ in range(tries):
            p = propose()
            if not pts or np.min(np.linalg.norm(np.asarray(pts) - p, axis=1)) >= MIN_SEPARATION:
                break
        else:
            raise RuntimeError(f"could not place {what} atom with {MIN_SEPARATION} A clearance")
        pts.append(p)
        out.append(p)
    return np.asarray(out)


def generate_complex(spec: DatasetSpec, index: int) -> Complex:
    """Deterministic synthetic complex number ``index``.

    The pocket is a jittered hemispherical shell (z >= 0) of typed atoms.
    The ligand sits in the cavity, pulled toward the pocket atoms of type 0,
    and each ligand atom takes the type of its nearest pocket atom (modulo
    the ligand vocabulary), so both placement and typing depend on the
    pocket.
    """
    if not 0 <= index < spec.count:
        raise IndexError(f"index {index} outside dataset of {spec.count}")
    rng = np.random.default_rng([spec.seed, DATA_STREAM, index])
    n_p = int(rng.integers(spec.pocket_atoms[0], spec.pocket_atoms[1] + 1))
    n_m = int(rng.integers(spec.ligand_atoms[0], spec.ligand_atoms[1] + 1))
    R = spec.shell_radius

    def shell_point():
        v = rng.standard_normal(3)
        v[2] = abs(v[2])
        return R * v / np.linalg.norm(v) + rng.normal(0.0, 0.3, 3)

    x_p = _place(rng, shell_point, np.zeros((0, 3)), n_p, "pocket")
    t_p = rng.integers(0, spec.protein_types, n_p)
    anchor = x_p[t_p == 0].mean(axis=0) if np.any(t_p == 0) else x_p.mean(axis=0)
    center = np.array([0.0, 0.0, 0.3 * R]) + 0.35 * anchor
    center *= min(1.0, (R - spec.ligand_spread - 1.0) / max(np.linalg.norm(center), 1e-9))

    def cavity_point():
        return center + rng.normal(0.0, spec.ligand_spread / np.sqrt(3.0), 3)

    x_m = _place(rng, cavity_point, x_p, n_m, "ligand")
    nearest = np.argmin(np.linalg.norm(x_m[:, None, :] - x_p[None, :, :], axis=-1), axis=1)
    t_m = t_p[nearest] % spec.atom_types
    return Complex(x_p, one_hot(t_p, spec.protein_types), x_m, one_hot(t_m, spec.atom_types),
                   f"synth_{spec.seed}_{index:05d}")


def generate_dataset(spec: DatasetSpec) -> list[Complex]:
    return [generate_complex(spec, i) for i in range(spec.count)]


# ------------------------------------------------------------------ files

def format_complex(c: Complex) -> str:
    lines = [f"complex {c.name} {c.n_protein} {c.n_ligand} {c.protein_types} {c.atom_types}"]
    for tag, xs, vs in (("P", c.x_p, c.v_p), ("L", c.x_m, c.v_m)):
        for x, v in zip(xs, vs):
            lines.append(f"{tag} {x[0]:.17g} {x[1]:.17g} {x[2]:.17g} {int(np.argmax(v))}")
    return "\n".join(lines) + "\n"


def write_complex(c: Complex, path) -> None:
    Path(path).write_text(format_complex(c), encoding="utf-8")


def parse_complex(text: str, source: str = "<complex>") -> Complex:
    lines = [(n, ln) for n, ln in enumerate(text.splitlines(), 1) if ln.strip()]
    if not lines:
        raise ParseError(f"{source}: empty file")
    lineno, header = lines[0]
    parts = header.split()
    if len(parts) != 6 or parts[0] != "complex":
        raise ParseError(f"{source}:{lineno}: expected 'complex <name> <N_P> <N_M> <D_P> <K>'")
    try:
        n_p, n_m, d_p, k = (int(p) for p in parts[2:])
    except ValueError:
        raise ParseError(f"{source}:{lineno}: counts must be integers") from None
    if n_p < 1:
        raise ParseError(f"{source}:{lineno}: N_P must be >= 1")
    if n_m < 1:
        raise ParseError(f"{source}:{lineno}: N_M must be >= 1")
    body = lines[1:]
    if len(body) != n_p + n_m:
        raise ParseError(f"{source}: header declares {n_p + n_m} atoms, found {len(body)} atom lines")
    xs = {"P": [], "L": []}
    ts = {"P": [], "L": []}
    for row, (lineno, ln) in enumerate(body):
        fields = ln.split()
        want = "P" if row < n_p else "L"
        if len(fields) == 5 and fields[0] == want:
            try:
                coords = [float(f) for f in fields[1:4]]
                ti = int(fields[4])
            except ValueError:
                raise ParseError(f"{source}:{lineno}: malformed atom line") from None
        elif fields and fields[0] == want and len(fields) > 5:
            raise ParseError(f"{source}:{lineno}: {want} row {row} type is not one-hot "
                             f"(expected a single type index, got {fields[4:]})")
        else:
            raise ParseError(f"{source}:{lineno}: expected '{want} x y z type'")
        width = d_p if want == "P" else k
        if not 0 <= ti < width:
            raise ParseError(f"{source}:{lineno}: type index {ti} outside [0, {width})")
        if not np.all(np.isfinite(coords)):
            raise ParseError(f"{source}:{lineno}: non-finite coordinate")
        xs[want].append(coords)
        ts[want].append(ti)
    try:
        return Complex(np.array(xs["P"]), one_hot(ts["P"], d_p), np.array(xs["L"]),
                       one_hot(ts["L"], k), parts[1])
    except ComplexError as exc:
        raise ParseError(f"{source}: {exc}") from None


def read_complex(path) -> Complex:
    path = Path(path)
    return parse_complex(path.read_text(encoding="utf-8"), str(path))


def write_dataset(complexes: Sequence[Complex], directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for c in complexes:
        fname = f"{c.name}.txt"
        write_complex(c, directory / fname)
        names.append(fname)
    (directory / MANIFEST).write_text("\n".join(names) + "\n", encoding="utf-8")
    return directory / MANIFEST


def read_manifest(path) -> list[Path]:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    base = path.parent
    return [base / ln.strip() for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]


def read_dataset(path) -> list[Complex]:
    return [read_complex(p) for p in read_manifest(path)]


def split_and_batch(dataset: Sequence, train_fraction: float = 0.8, batch_size: int = 4,
                    seed: int = 0):
    """Shuffle deterministically, split, and cut the training part into batches.

    Returns ``(train_batches, test_items)``; the final batch may be short.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train fraction must lie in (0, 1)")
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    order = np.random.default_rng([seed, DATA_STREAM]).permutation(len(dataset))
    n_train = int(round(train_fraction * len(dataset)))
    train = [dataset[i] for i in order[:n_train]]
    test = [dataset[i] for i in order[n_train:]]
    batches = [train[i:i + batch_size] for i in range(0, len(train), batch_size)]
    return batches, test
