"""Self-verification suites run by ``pocketbfn check``.

Each suite returns a :class:`SuiteResult`; the oracles are independent of
the code under test (finite differences, Monte Carlo, brute-force scans).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import bfn
from .config import ModelConfig
from .geometry import Complex, center_by_protein_com, one_hot, random_rotation
from .gradcheck import check_gradients
from .mhca import attention_map, head_context, init_mhca_weights, mhca_forward
from .model import ModelWeights, backbone_forward
from .msib import bottleneck_widths, init_msib_weights, msib_fusion

LEVELS = ("quick", "full")


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def small_config(**overrides) -> ModelConfig:
    base = dict(hidden_dim=16, n_layers=2, n_heads=4, knn_k=8)
    base.update(overrides)
    return ModelConfig(**base)


def random_complex(rng: np.random.Generator, n_p: int, n_m: int, d_p: int = 6, k: int = 6,
                   spread: float = 4.0, name: str = "rand") -> Complex:
    return Complex(rng.normal(0, spread, (n_p, 3)), one_hot(rng.integers(0, d_p, n_p), d_p),
                   rng.normal(0, spread / 2, (n_m, 3)), one_hot(rng.integers(0, k, n_m), k), name)


def random_belief(rng: np.random.Generator, n_m: int, k: int):
    mu = rng.normal(0, 1.5, (n_m, 3))
    theta = rng.dirichlet(np.ones(k), n_m)
    return mu, theta


# ------------------------------------------------------------- suites

def equivariance_deviation(weights: ModelWeights, n_complexes: int, n_transforms: int,
                           seed: int = 0) -> float:
    """Max abs deviation of (invariant h/logits, equivariant x_hat) over random rigid motions."""
    rng = np.random.default_rng(seed)
    cfg = weights.config
    worst = 0.0
    for ci in range(n_complexes):
        c = random_complex(rng, int(rng.integers(8, 16)), int(rng.integers(2, 6)),
                           cfg.protein_types, cfg.atom_types)
        mu, theta = random_belief(rng, c.n_ligand, cfg.atom_types)
        t = float(rng.random())
        base = backbone_forward(c, mu, theta, t, weights)
        for _ in range(n_transforms):
            rot, shift = random_rotation(rng), rng.normal(0, 5.0, 3)
            out = backbone_forward(c.transformed(rot, shift), mu @ rot.T + shift, theta, t, weights)
            worst = max(worst,
                        np.abs(out.h.data - base.h.data).max(),
                        np.abs(out.logits.data - base.logits.data).max(),
                        np.abs(out.x_hat.data - (base.x_hat.data @ rot.T + shift)).max())
    return float(worst)


def suite_equivariance(level: str) -> SuiteResult:
    n = 5 if level == "quick" else 20
    w = ModelWeights.init(small_config(), np.random.default_rng(1))
    dev = equivariance_deviation(w, n, n)
    return SuiteResult("equivariance", dev <= 1e-6, f"{n}x{n} transforms, max deviation {dev:.2e} (tol 1e-6)")


def gradient_problem(seed: int = 0):
    """Tiny model plus a 4-protein/2-ligand instance and a deterministic loss closure."""
    cfg = ModelConfig(hidden_dim=8, n_layers=2, n_heads=2, knn_k=5)
    weights = ModelWeights.init(cfg, np.random.default_rng([seed, 7]))
    rng = np.random.default_rng([seed, 8])
    c = center_by_protein_com(random_complex(rng, 4, 2, spread=2.0))
    # a strong type schedule so the last attention block, which only reaches
    # the loss through the type term, carries a gradient well above roundoff
    sched = bfn.schedule_new(100, 0.03, 100.0)

    def loss():
        total, _, _ = bfn.item_loss(c, weights, sched, np.random.default_rng([seed, 9]), step_index=50)
        return total

    return weights, loss


def gradient_report(max_entries: int | None, seed: int = 0, groups=("layers", "msib_p", "msib_m", "mhca")):
    weights, loss = gradient_problem(seed)
    params = [(p, t) for p, t in weights.named_parameters() if p.split(".")[0] in groups]
    return check_gradients(loss, params, eps=1e-5, max_entries=max_entries,
                           rng=np.random.default_rng([seed, 10]))


def suite_gradients(level: str) -> SuiteResult:
    res = gradient_report(6 if level == "quick" else None)
    bad = [r for r in res if not r.ok(1e-4)]
    worst = max(res, key=lambda r: r.rel_error)
    detail = f"{len(res)} tensors, worst {worst.name} rel {worst.rel_error:.2e} (tol 1e-4)"
    if bad:
        detail += "; failing: " + ", ".join(f"{r.name}={r.rel_error:.1e}" for r in bad[:5])
    return SuiteResult("gradients", not bad, detail)


def suite_schedule(level: str) -> SuiteResult:
    problems = []
    sigma, beta = 0.03, 1.0
    for n in (1, 10, 100, 1000):
        s = bfn.schedule_new(n, sigma, beta)
        e1 = abs(1.0 + s.alpha_x.sum() - sigma ** -2) / sigma ** -2
        e2 = abs(s.alpha_v.sum() - beta)
        if e1 > 1e-9 or e2 > 1e-12:
            problems.append(f"n={n}: coords {e1:.1e}, types {e2:.1e}")
    w = ModelWeights.init(small_config(), np.random.default_rng(2))
    pocket = random_complex(np.random.default_rng(3), 10, 3)
    n = 20 if level == "quick" else 100
    mol = bfn.sample(pocket, 3, w, bfn.schedule_new(n, sigma, beta), np.random.default_rng(4))
    rho_err = abs(mol.rho_trace[-1] - sigma ** -2) / sigma ** -2
    monotone = bool(np.all(np.diff(mol.rho_trace) > 0))
    if rho_err > 1e-6 or not monotone:
        problems.append(f"sampled rho_n rel err {rho_err:.1e}, monotone={monotone}")
    return SuiteResult("schedule", not problems,
                       "; ".join(problems) or f"telescoping exact; sampled rho_n rel err {rho_err:.1e}")


def suite_attention(level: str) -> SuiteResult:
    rng = np.random.default_rng(5)
    n_inputs = 20 if level == "quick" else 100
    d, n_heads = 16, 4
    col_err, hull_viol, asym = 0.0, 0.0, 0
    for _ in range(n_inputs):
        w = {k: ad.constant(v) for k, v in init_mhca_weights(rng, d, n_heads).items()}
        H_p = rng.normal(size=(int(rng.integers(2, 12)), d))
        H_m = rng.normal(size=(int(rng.integers(1, 6)), d))
        for h in range(n_heads):
            A = attention_map(H_p, H_m, w, h).data
            col_err = max(col_err, np.abs(A.sum(axis=0) - 1.0).max())
            C = head_context(ad.constant(H_p), ad.constant(H_m), w, h)[0].data
            P = H_p @ w[f"wp{h}"].data.T
            lo, hi = P.min(axis=0) - 1e-12, P.max(axis=0) + 1e-12
            hull_viol = max(hull_viol, np.maximum(lo - C, 0).max(), np.maximum(C - hi, 0).max())
        p1, _ = mhca_forward(H_p, H_m, w)
        p2, _ = mhca_forward(H_p, H_m + rng.normal(size=H_m.shape), w)
        asym += int(not np.array_equal(p1.data, p2.data))
    ok = col_err <= 1e-12 and hull_viol == 0.0 and asym == 0
    return SuiteResult("attention", ok, f"{n_inputs} inputs: column-sum err {col_err:.1e}, "
                                        f"hull violation {hull_viol:.1e}, protein changed in {asym}")


def suite_msib(level: str) -> SuiteResult:
    rng = np.random.default_rng(6)
    n_inputs = 20 if level == "quick" else 100
    mismatches = 0
    for _ in range(n_inputs):
        w = init_msib_weights(rng, 32)
        for key in list(w):
            if key.startswith("dec_"):
                w[key] = np.zeros_like(w[key])
        H = rng.normal(size=(int(rng.integers(1, 10)), 32))
        mismatches += int(not np.array_equal(msib_fusion(ad.constant(H), w).data, H))
    widths = sorted(bottleneck_widths(128))
    ok = mismatches == 0 and widths == [16, 32, 64]
    return SuiteResult("msib", ok, f"{n_inputs} inputs, {mismatches} identity mismatches; widths {widths}")


def mc_kl_gaussian(x: np.ndarray, x_hat: np.ndarray, alpha: float, n_samples: int,
                   rng: np.random.Generator) -> float:
    """Monte Carlo KL(N(x, I/alpha) || N(x_hat, I/alpha)) via log-density differences."""
    y = x[None] + rng.standard_normal((n_samples,) + x.shape) / np.sqrt(alpha)
    log_p = -0.5 * alpha * ((y - x[None]) ** 2).sum(axis=(1, 2))
    log_q = -0.5 * alpha * ((y - x_hat[None]) ** 2).sum(axis=(1, 2))
    return float(np.mean(log_p - log_q))


def type_loss_stats(v_index, p_o: np.ndarray, alpha_v: float, n_draws: int, seed: int):
    vals = np.array([bfn.loss_types_from_probs(v_index, p_o, alpha_v, np.random.default_rng([seed, j]))
                     for j in range(n_draws)])
    return vals.mean(), vals.std(ddof=1) / np.sqrt(n_draws)


def suite_kl(level: str) -> SuiteResult:
    n_samples, tol = (10_000, 0.05) if level == "quick" else (100_000, 0.02)
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(10):
        n_atoms = int(rng.integers(1, 6))
        x = rng.normal(size=(n_atoms, 3))
        alpha = float(rng.uniform(0.5, 5.0))
        x_hat = x + rng.normal(size=x.shape) * rng.uniform(1.0, 2.0)
        exact = bfn.loss_coords(x, x_hat, alpha).item()
        worst = max(worst, abs(mc_kl_gaussian(x, x_hat, alpha, n_samples, rng) - exact) / exact)
    v = np.array([0, 3, 5])
    k, av = 6, 0.5
    draws = 2_000 if level == "quick" else 10_000
    m1, se1 = type_loss_stats(v, one_hot(v, k), av, draws, 12)
    m2, se2 = type_loss_stats(v, rng.dirichlet(np.ones(k), len(v)), av, draws, 13)
    ok = worst <= tol and abs(m1) <= 3 * se1 + 1e-12 and m2 >= -3 * se2
    return SuiteResult("kl", ok, f"coords MC rel err {worst:.2%} (tol {tol:.0%}, {n_samples} samples); "
                                 f"types one-hot mean {m1:.2e}+-{se1:.1e}, random {m2:.3f}+-{se2:.3f}")


SUITES: dict[str, Callable[[str], SuiteResult]] = {
    "equivariance": suite_equivariance,
    "gradients": suite_gradients,
    "schedule": suite_schedule,
    "attention": suite_attention,
    "msib": suite_msib,
    "kl": suite_kl,
}


def run_checks(level: str = "quick", only=None) -> list[SuiteResult]:
    if level not in LEVELS:
        raise ValueError(f"unknown check level {level!r}; choose from {LEVELS}")
    results = []
    for name, fn in SUITES.items():
        if only and name not in only:
            continue
        start = time.perf_counter()
        try:
            res = fn(level)
        except Exception as exc:  # a crashing suite is a failing suite
            res = SuiteResult(name, False, f"raised {type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - start
        results.append(res)
    return results
