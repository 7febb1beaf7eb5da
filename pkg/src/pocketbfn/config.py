"""Run configuration: model hyperparameters and the flat ``key = value`` file.

Config files are plain text, one ``key = value`` per line, ``#`` starts a
comment. Unknown keys are rejected. Only ``seed`` is mandatory; every other
key falls back to the default listed in ``KEYS``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Callable


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    protein_types: int = 6
    atom_types: int = 6
    hidden_dim: int = 128
    n_layers: int = 4
    n_heads: int = 8
    knn_k: int = 16
    msib_ratios: tuple[float, ...] = (0.125, 0.25, 0.5)
    use_msib: bool = True
    use_mhca: bool = True
    enhance_every_layer: bool = True
    attention_messages: bool = True
    rbf_distances: bool = True
    shared_gate: bool = False
    n_rbf: int = 16
    rbf_max: float = 10.0
    rbf_width: float = 0.5
    n_time_freqs: int = 4
    max_coord_step: float = 10.0
    coord_init_gain: float = 1.0
    ln_eps: float = 1e-5

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["msib_ratios"] = list(self.msib_ratios)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "msib_ratios" in d:
            d["msib_ratios"] = tuple(float(r) for r in d["msib_ratios"])
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(p) for p in s.replace(" ", "").split(",") if p)


# key -> (parser, default, help); default None means required
KEYS: dict[str, tuple[Callable[[str], Any], Any, str]] = {
    "seed": (int, None, "master seed; data/train/sample streams derive from it (required)"),
    "threads": (int, 1, "worker threads for per-item gradients inside a batch"),
    # dataset
    "count": (int, 64, "number of synthetic complexes"),
    "pocket_atoms_min": (int, 20, "minimum pocket atoms"),
    "pocket_atoms_max": (int, 32, "maximum pocket atoms"),
    "ligand_atoms_min": (int, 4, "minimum ligand atoms"),
    "ligand_atoms_max": (int, 6, "maximum ligand atoms"),
    "shell_radius": (float, 6.0, "pocket shell radius (A)"),
    "ligand_spread": (float, 1.5, "ligand atom spread inside the cavity (A)"),
    "protein_types": (int, 6, "protein feature vocabulary size D_P"),
    "atom_types": (int, 6, "ligand atom type vocabulary size K"),
    "data_dir": (str, "data", "dataset directory (written by gen-data, read by train)"),
    # model
    "hidden_dim": (int, 128, "hidden width d"),
    "n_layers": (int, 4, "equivariant layers L"),
    "n_heads": (int, 8, "attention heads H in the cooperative attention"),
    "knn_k": (int, 16, "neighbours per atom in the k-NN graph"),
    "msib_ratios": (_floats, (0.125, 0.25, 0.5), "bottleneck compression ratios"),
    "use_msib": (_bool, True, "enable the multi-scale bottleneck"),
    "use_mhca": (_bool, True, "enable the cooperative attention"),
    "enhance_every_layer": (_bool, True, "run bottleneck/attention after every layer (else once)"),
    "attention_messages": (_bool, True, "attention-weighted messages (false: plain sums)"),
    "rbf_distances": (_bool, True, "Gaussian basis distance features (false: raw distance)"),
    "shared_gate": (_bool, False, "one gate matrix shared by all heads"),
    "coord_init_gain": (float, 1.0, "init scale of the coordinate head output layer"),
    # flow
    "n_steps": (int, 100, "discrete Bayesian update steps n"),
    "sigma1_coord": (float, 0.03, "terminal coordinate noise sigma_1"),
    "beta1_type": (float, 1.0, "terminal type accuracy beta_1"),
    # training
    "lr": (float, 0.005, "Adam learning rate"),
    "batch_size": (int, 4, "complexes per step"),
    "epochs": (int, 25, "training epochs"),
    "grad_clip": (float, 10.0, "global gradient-norm clip"),
    "train_fraction": (float, 0.8, "fraction of the dataset used for training"),
    "out_dir": (str, "run", "training output directory (checkpoint, loss log)"),
}

MODEL_KEYS = ("protein_types", "atom_types", "hidden_dim", "n_layers", "n_heads", "knn_k",
              "msib_ratios", "use_msib", "use_mhca", "enhance_every_layer",
              "attention_messages", "rbf_distances", "shared_gate", "coord_init_gain")


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown config key '{key}'")
        try:
            values[key] = KEYS[key][0](val)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for '{key}': {exc}") from None
    for key, (_, default, _) in KEYS.items():
        if key not in values:
            if default is None:
                raise ConfigError(f"{source}: missing required key '{key}'")
            values[key] = default
    return values


def load_config(path) -> dict[str, Any]:
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def model_config(values: dict[str, Any]) -> ModelConfig:
    return ModelConfig.from_dict({k: values[k] for k in MODEL_KEYS})


def describe_keys() -> str:
    lines = ["config keys (key = value):"]
    for key, (_, default, text) in KEYS.items():
        shown = "required" if default is None else (
            ",".join(map(str, default)) if isinstance(default, tuple) else default)
        lines.append(f"  {key:<20} [{shown}] {text}")
    return "\n".join(lines)
