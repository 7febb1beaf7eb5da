"""File-level workflows behind the command line: data, training, sampling, evaluation.

Random streams all derive from the config ``seed``::

    data    [seed, 0, index]                      one generator per complex
    split   [seed, 0]                             train/test shuffle
    train   [seed, 1, 0]                          weight init
            [seed, 1, 1, epoch]                   batch order within an epoch
            [seed, 1, 2, epoch, batch, item]      step and flow-state draws
    sample  [seed, 2, index]                      one generator per molecule
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import autodiff as ad
from . import bfn
from .checkpoint import load_checkpoint, restore_optimizer, save_checkpoint
from .config import MODEL_KEYS, model_config
from .data import DatasetSpec, generate_dataset, read_complex, read_dataset, split_and_batch, write_complex, write_dataset
from .geometry import center_by_protein_com
from .metrics import report_rows
from .model import ModelWeights

log = logging.getLogger(__name__)

TRAIN_STREAM = 1
SAMPLE_STREAM = 2
CHECKPOINT = "checkpoint.ckpt"
LOSS_LOG = "loss_log.tsv"
TEST_MANIFEST = "test_manifest.txt"
LOG_HEADER = "step\tepoch\tbatch\tloss\tloss_x\tloss_v\tgrad_norm"

# keys that must match when resuming; epochs may grow, threads may change
_RUN_KEYS = MODEL_KEYS + ("seed", "data_dir", "n_steps", "sigma1_coord", "beta1_type", "lr",
                          "batch_size", "grad_clip", "train_fraction")


def dataset_spec(values: dict[str, Any]) -> DatasetSpec:
    return DatasetSpec(count=values["count"], seed=values["seed"],
                       pocket_atoms=(values["pocket_atoms_min"], values["pocket_atoms_max"]),
                       ligand_atoms=(values["ligand_atoms_min"], values["ligand_atoms_max"]),
                       shell_radius=values["shell_radius"], ligand_spread=values["ligand_spread"],
                       protein_types=values["protein_types"], atom_types=values["atom_types"])


def gen_data(values: dict[str, Any]) -> Path:
    """Write the synthetic dataset; returns the manifest path."""
    return write_dataset(generate_dataset(dataset_spec(values)), values["data_dir"])


def schedule_from(values: dict[str, Any]) -> bfn.NoiseSchedule:
    return bfn.schedule_new(values["n_steps"], values["sigma1_coord"], values["beta1_type"])


def _run_digest(values: dict[str, Any]) -> str:
    blob = json.dumps({k: values[k] for k in _RUN_KEYS}, sort_keys=True, default=list)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class TrainSummary:
    steps: int
    epochs: int
    final_loss: float
    checkpoint: Path


def train(values: dict[str, Any], resume: bool = False,
          progress: Callable[[str], None] | None = None) -> TrainSummary:
    """Train on ``data_dir``, writing ``out_dir/{checkpoint.ckpt, loss_log.tsv}``.

    The checkpoint is rewritten after every epoch. With ``resume`` the run
    continues from it and the loss log continues exactly as an unbroken run
    would have written it.
    """
    progress = progress or (lambda msg: None)
    seed = values["seed"]
    out = Path(values["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    ckpt, log_path = out / CHECKPOINT, out / LOSS_LOG

    dataset = [center_by_protein_com(c) for c in read_dataset(values["data_dir"])]
    batches, test = split_and_batch(dataset, values["train_fraction"], values["batch_size"], seed)
    train_items = [c for b in batches for c in b]
    if not train_items:
        raise ValueError("training split is empty")
    (out / TEST_MANIFEST).write_text("".join(f"{c.name}.txt\n" for c in test), encoding="utf-8")
    sched = schedule_from(values)
    digest = _run_digest(values)

    if resume and ckpt.exists():
        weights, meta, arrays = load_checkpoint(ckpt)
        if meta.get("run_digest") != digest:
            raise ValueError(f"{ckpt} was written by a run with different settings; refusing to resume")
        opt = bfn.AdamState(weights.parameters(), lr=values["lr"])
        restore_optimizer(opt, weights, meta, arrays)
        start_epoch, step = int(meta["epoch"]), int(meta["step"])
        rows = log_path.read_text(encoding="utf-8").splitlines()[1:step + 1] if log_path.exists() else []
        if len(rows) != step:
            raise ValueError(f"{log_path} holds {len(rows)} steps, checkpoint expects {step}")
        progress(f"resuming at epoch {start_epoch}, step {step}")
    else:
        weights = ModelWeights.init(model_config(values), np.random.default_rng([seed, TRAIN_STREAM, 0]))
        opt = bfn.AdamState(weights.parameters(), lr=values["lr"])
        start_epoch, step, rows = 0, 0, []

    bs = values["batch_size"]
    last = float("nan")
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join([LOG_HEADER] + rows) + "\n")
        for epoch in range(start_epoch, values["epochs"]):
            order = np.random.default_rng([seed, TRAIN_STREAM, 1, epoch]).permutation(len(train_items))
            for b in range(0, len(order), bs):
                batch = [train_items[j] for j in order[b:b + bs]]
                rngs = [np.random.default_rng([seed, TRAIN_STREAM, 2, epoch, b // bs, j])
                        for j in range(len(batch))]
                try:
                    r = bfn.train_step(batch, weights, sched, opt, rngs, values["grad_clip"], values["threads"])
                except ad.NumericError as exc:
                    raise ad.NumericError(f"training step {step} (epoch {epoch}, batch {b // bs}): {exc}") from exc
                fh.write(f"{step}\t{epoch}\t{b // bs}\t{r.loss!r}\t{r.loss_x!r}\t{r.loss_v!r}\t{r.grad_norm!r}\n")
                fh.flush()
                step += 1
                last = r.loss
            save_checkpoint(ckpt, weights, {"epoch": epoch + 1, "step": step, "run_digest": digest,
                                            "n_steps": sched.n, "sigma1_coord": sched.sigma1_x,
                                            "beta1_type": sched.beta1_v}, opt)
            progress(f"epoch {epoch + 1}/{values['epochs']} step {step} loss {last:.4f}")
    return TrainSummary(step, values["epochs"], last, ckpt)


def read_loss_log(path) -> np.ndarray:
    """Loss column of a training log."""
    rows = Path(path).read_text(encoding="utf-8").splitlines()[1:]
    return np.array([float(r.split("\t")[3]) for r in rows])


def sample_to_dir(checkpoint, pocket_path, n_atoms: int | None, count: int, seed: int, out_dir,
                  n_steps: int | None = None, trace: bool = False, threads: int = 1) -> list[Path]:
    """Generate ``count`` ligands for a pocket; files ``sample_0000.txt`` and up.

    Each output is a complete complex (the input pocket plus the generated
    ligand). ``n_atoms`` defaults to the ligand size in the pocket file.
    """
    weights, meta, _ = load_checkpoint(checkpoint)
    pocket = read_complex(pocket_path)
    n_atoms = pocket.n_ligand if n_atoms is None else n_atoms
    if n_atoms < 1:
        raise ValueError("N_M must be >= 1")
    if count < 1:
        raise ValueError("count must be >= 1")
    sched = bfn.schedule_new(n_steps or int(meta.get("n_steps", 100)),
                             float(meta.get("sigma1_coord", 0.03)), float(meta.get("beta1_type", 1.0)))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def one(idx):
        steps: list | None = [] if trace else None
        mol = bfn.sample(pocket, n_atoms, weights, sched, np.random.default_rng([seed, SAMPLE_STREAM, idx]), steps)
        path = out / f"sample_{idx:04d}.txt"
        write_complex(mol.as_complex(pocket, weights.config.atom_types, f"sample_{idx:04d}"), path)
        if trace:
            lines = ["step\tt\trho"] + [f"{i}\t{t!r}\t{rho!r}" for i, t, rho in steps]
            (out / f"trace_{idx:04d}.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    if threads > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(count)))
    return [one(i) for i in range(count)]


@dataclass
class EvalSummary:
    rows: list[dict]
    rmsd_pass_rate: float
    matched_pass_rate: float
    mean_clashes: float


REPORT_COLUMNS = ("sample", "rmsd", "matched_rmsd", "clashes", "rmsd_pass", "matched_pass")


def evaluate_dir(samples_dir, reference_path, report_path=None, clash_threshold: float = 2.0,
                 cutoff: float = 2.0) -> EvalSummary:
    samples_dir = Path(samples_dir)
    files = sorted(samples_dir.glob("sample_*.txt"))
    if not files:
        raise ValueError(f"no samples in {samples_dir}")
    ref = read_complex(reference_path)
    samples = [read_complex(p) for p in files]
    for p, s in zip(files, samples):
        if s.n_ligand != ref.n_ligand:
            raise ValueError(f"{p.name}: {s.n_ligand} ligand atoms, reference has {ref.n_ligand}")
    rows = report_rows(samples, ref, clash_threshold, cutoff)
    summary = EvalSummary(rows, float(np.mean([r["rmsd_pass"] for r in rows])),
                          float(np.mean([r["matched_pass"] for r in rows])),
                          float(np.mean([r["clashes"] for r in rows])))
    if report_path is not None:
        lines = ["\t".join(REPORT_COLUMNS)]
        lines += ["\t".join(f"{r[c]:.6f}" if isinstance(r[c], float) else str(r[c]) for c in REPORT_COLUMNS)
                  for r in rows]
        lines.append(f"# samples={len(rows)} rmsd_pass_rate={summary.rmsd_pass_rate:.6f} "
                     f"matched_pass_rate={summary.matched_pass_rate:.6f} mean_clashes={summary.mean_clashes:.6f}")
        Path(report_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return summary
