"""Bayesian-flow generation for ligand coordinates and atom types.

Beliefs over a ligand are a Gaussian over coordinates (mean ``mu``, one
shared precision ``rho``) and a categorical simplex per atom over types.
Each of ``n`` steps the network predicts the ligand from the current
belief, a noisy observation is drawn around that prediction, and the
belief absorbs it by conjugate Bayesian updating.

Accuracies per step:

* coordinates: ``alpha_i = s^(-2i/n) * (1 - s^(2/n))`` with ``s = sigma1``,
  so that ``1 + sum(alpha) = s^-2``;
* types: ``alpha'_i = beta1 * (2i - 1) / n^2``, so that ``sum = beta1``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .geometry import Complex, center_by_protein_com, one_hot
from .model import ModelWeights, backbone_forward

log = logging.getLogger(__name__)


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    n: int
    sigma1_x: float = 0.03
    beta1_v: float = 1.0
    alpha_x: np.ndarray = field(init=False, repr=False, compare=False)
    alpha_v: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ScheduleError(f"n must be a positive integer, got {self.n}")
        if not 0.0 < self.sigma1_x < 1.0:
            raise ScheduleError(f"sigma1_x must lie in (0, 1), got {self.sigma1_x}")
        if not self.beta1_v > 0.0:
            raise ScheduleError(f"beta1_v must be positive, got {self.beta1_v}")
        i = np.arange(1, self.n + 1, dtype=np.float64)
        s = self.sigma1_x
        object.__setattr__(self, "alpha_x", s ** (-2.0 * i / self.n) * (1.0 - s ** (2.0 / self.n)))
        object.__setattr__(self, "alpha_v", self.beta1_v * (2.0 * i - 1.0) / self.n ** 2)

    def alpha(self, i: int) -> float:
        return float(self.alpha_x[i - 1])

    def alpha_type(self, i: int) -> float:
        return float(self.alpha_v[i - 1])

    def gamma(self, t: float) -> float:
        return 1.0 - self.sigma1_x ** (2.0 * t)

    def beta(self, t: float) -> float:
        return self.beta1_v * t * t


def schedule_new(n: int, sigma1_x: float = 0.03, beta1_v: float = 1.0) -> NoiseSchedule:
    return NoiseSchedule(n, sigma1_x, beta1_v)


@dataclass
class BeliefState:
    mu: np.ndarray          # [N_M, 3]
    rho: float
    theta_v: np.ndarray     # [N_M, K]
    step: int = 0
    t: float = 0.0

    @classmethod
    def prior(cls, n_atoms: int, n_types: int) -> "BeliefState":
        return cls(np.zeros((n_atoms, 3)), 1.0, np.full((n_atoms, n_types), 1.0 / n_types))


@dataclass
class SampledMolecule:
    x: np.ndarray
    types: np.ndarray
    seed: int | None = None
    schedule: tuple = ()
    rho_trace: list[float] = field(default_factory=list)

    def as_complex(self, pocket: Complex, n_types: int, name: str = "sample") -> Complex:
        return Complex(pocket.x_p, pocket.v_p, self.x, one_hot(self.types, n_types), name)


# ------------------------------------------------------------ sender / flow

def type_sender_mean(v_index: np.ndarray, n_types: int, alpha: float) -> np.ndarray:
    return alpha * (n_types * one_hot(v_index, n_types) - 1.0)


def sample_sender(m: Complex, sched: NoiseSchedule, i: int, rng: np.random.Generator,
                  alpha: float | None = None, alpha_v: float | None = None):
    """Draw ``(y_x, y_v)`` from the sender distribution at step ``i``."""
    a = sched.alpha(i) if alpha is None else alpha
    av = sched.alpha_type(i) if alpha_v is None else alpha_v
    k = m.atom_types
    y_x = m.x_m + rng.standard_normal(m.x_m.shape) / np.sqrt(a)
    mean_v = type_sender_mean(m.ligand_type_index, k, av)
    y_v = mean_v + rng.standard_normal(mean_v.shape) * np.sqrt(av * k)
    return y_x, y_v


def _row_softmax(y: np.ndarray) -> np.ndarray:
    z = np.exp(y - y.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def flow_state(m: Complex, sched: NoiseSchedule, t: float, rng: np.random.Generator) -> BeliefState:
    """Belief reached after accumulating evidence up to time ``t``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    gamma = sched.gamma(t)
    mu = gamma * m.x_m + np.sqrt(gamma * (1.0 - gamma)) * rng.standard_normal(m.x_m.shape)
    k = m.atom_types
    beta = sched.beta(t)
    y = type_sender_mean(m.ligand_type_index, k, beta) + np.sqrt(beta * k) * rng.standard_normal((m.n_ligand, k))
    return BeliefState(mu, 1.0 / (1.0 - gamma), _row_softmax(y), t=t)


# -------------------------------------------------------------- updates

def bayes_update_coords(mu: np.ndarray, rho: float, y_x: np.ndarray, alpha: float):
    rho_new = rho + alpha
    return (rho * mu + alpha * y_x) / rho_new, rho_new


def bayes_update_types(theta_v: np.ndarray, y_v: np.ndarray) -> np.ndarray:
    logits = np.log(np.clip(theta_v, 1e-300, None)) + y_v
    return _row_softmax(logits)


def output_distribution(x_hat, logits, sched: NoiseSchedule | None = None, t: float | None = None):
    """Coordinates pass through; type logits become row probabilities."""
    return x_hat, ad.softmax_axis(ad.constant(logits), axis=1)


# --------------------------------------------------------------- losses

def loss_coords(x, x_hat, alpha: float) -> ad.Tensor:
    """Closed-form KL between equal-variance Gaussians centered at x and x_hat."""
    return ad.scale(ad.sum(ad.square(ad.sub(ad.constant(x), x_hat))), 0.5 * alpha)


def _gauss_logpdf_kernel(y: np.ndarray, means: np.ndarray, var: float) -> np.ndarray:
    # log N(y | mean, var I) up to the normalizer, which cancels between the
    # sender and receiver terms because both share the variance.
    return -0.5 * ((y - means) ** 2).sum(axis=-1) / var


def loss_types(v_index: np.ndarray, logits: ad.Tensor, alpha_v: float, n_types: int,
               rng: np.random.Generator, draws: int = 1) -> ad.Tensor:
    """Monte Carlo estimate of KL(sender || receiver) for atom types.

    Takes the type logits (``p_O = softmax(logits)``) so the log-mixture can
    use ``log_softmax`` directly. With ``draws > 1`` the estimate averages
    that many independent sender samples; the expectation is unchanged and
    the variance drops by the same factor.
    """
    if draws < 1:
        raise ValueError("draws must be >= 1")
    k = n_types
    mean_true = type_sender_mean(v_index, k, alpha_v)
    var = alpha_v * k
    n = mean_true.shape[0]
    y = mean_true[None] + rng.standard_normal((draws,) + mean_true.shape) * np.sqrt(var)   # [D, N, K]
    y = y.reshape(draws * n, k)
    sender = float(_gauss_logpdf_kernel(y, np.tile(mean_true, (draws, 1)), var).sum())
    class_means = alpha_v * (k * np.eye(k) - 1.0)                       # [K, K]
    comp = _gauss_logpdf_kernel(y[:, None, :], class_means[None, :, :], var)   # [D*N, K]
    log_p = ad.log_softmax(ad.constant(logits), axis=1)
    if draws > 1:
        log_p = ad.take_rows(log_p, np.tile(np.arange(n), draws))
    receiver = ad.sum(ad.logsumexp(ad.add(log_p, comp), axis=1))
    return ad.scale(ad.sub(ad.constant(sender), receiver), 1.0 / draws)


def loss_types_from_probs(v_index, p_o: np.ndarray, alpha_v: float, rng) -> float:
    """Numeric variant taking probabilities directly (zeros allowed)."""
    k = p_o.shape[1]
    mean_true = type_sender_mean(v_index, k, alpha_v)
    var = alpha_v * k
    y = mean_true + rng.standard_normal(mean_true.shape) * np.sqrt(var)
    sender = _gauss_logpdf_kernel(y, mean_true, var).sum()
    comp = _gauss_logpdf_kernel(y[:, None, :], (alpha_v * (k * np.eye(k) - 1.0))[None], var)
    with np.errstate(divide="ignore"):
        a = np.log(p_o) + comp
    mx = a.max(axis=1, keepdims=True)
    receiver = (np.log(np.exp(a - mx).sum(axis=1)) + mx[:, 0]).sum()
    return float(sender - receiver)


def loss_total(coords_term, types_term):
    return ad.add(coords_term, types_term)


# ------------------------------------------------------------- training

class AdamState:
    """Adam moments for a fixed, ordered list of parameters."""

    def __init__(self, params: Sequence[ad.Tensor], lr: float = 0.005, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.step = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def apply(self, params: Sequence[ad.Tensor], grads: Sequence[np.ndarray]) -> None:
        if self.lr == 0.0:
            return
        self.step += 1
        c1 = 1.0 - self.b1 ** self.step
        c2 = 1.0 - self.b2 ** self.step
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if max_norm > 0 and norm > max_norm:
        f = max_norm / norm
        grads = [g * f for g in grads]
    return grads, norm


@dataclass
class StepResult:
    loss: float
    loss_x: float
    loss_v: float
    grad_norm: float


def item_loss(c: Complex, weights: ModelWeights, sched: NoiseSchedule, rng: np.random.Generator,
              step_index: int | None = None, type_draws: int = 1):
    """L_total for one centered complex at a random (or given) step."""
    i = int(rng.integers(1, sched.n + 1)) if step_index is None else step_index
    t = (i - 1) / sched.n
    belief = flow_state(c, sched, t, rng)
    out = backbone_forward(c, belief.mu, belief.theta_v, t, weights)
    lx = loss_coords(c.x_m, out.x_hat, sched.alpha(i))
    lv = loss_types(c.ligand_type_index, out.logits, sched.alpha_type(i), c.atom_types, rng, type_draws)
    return loss_total(lx, lv), lx, lv


def train_step(batch: Sequence[Complex], weights: ModelWeights, sched: NoiseSchedule,
               opt: AdamState, rngs: Sequence[np.random.Generator], grad_clip: float = 10.0,
               threads: int = 1, type_draws: int = 1) -> StepResult:
    """One optimizer step on the batch mean of L_total.

    ``rngs`` holds one generator per item so results do not depend on how
    items are scheduled across threads; gradients are reduced in item order.
    """
    params = weights.parameters()

    def one(j):
        total, lx, lv = item_loss(batch[j], weights, sched, rngs[j], type_draws=type_draws)
        return total.item(), lx.item(), lv.item(), ad.gradients(total, params)

    if threads > 1 and len(batch) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(len(batch))))
    else:
        results = [one(j) for j in range(len(batch))]
    losses = np.array([r[:3] for r in results])
    if not np.all(np.isfinite(losses)):
        raise ad.NumericError(f"non-finite loss in batch: {losses[:, 0]}")
    grads = [np.zeros_like(p.data) for p in params]
    for r in results:
        for acc, g in zip(grads, r[3]):
            acc += g
    grads = [g / len(batch) for g in grads]
    grads, norm = clip_global_norm(grads, grad_clip)
    opt.apply(params, grads)
    mean = losses.mean(axis=0)
    return StepResult(float(mean[0]), float(mean[1]), float(mean[2]), norm)


def evaluate_loss(complexes: Sequence[Complex], weights: ModelWeights, sched: NoiseSchedule,
                  seed: int, draws: int = 8) -> float:
    """Mean L_total over a fixed, seeded set of steps and flow states."""
    vals = []
    for ci, c in enumerate(complexes):
        for j in range(draws):
            rng = np.random.default_rng([seed, ci, j])
            i = 1 + (j * sched.n) // draws + int(rng.integers(0, max(1, sched.n // draws)))
            total, _, _ = item_loss(c, weights, sched, rng, step_index=min(i, sched.n))
            vals.append(total.item())
    return float(np.mean(vals))


# -------------------------------------------------------------- sampling

def pocket_frame(x_p: np.ndarray) -> np.ndarray:
    """Orthonormal frame (columns) attached to a centered pocket.

    Principal axes of the protein coordinates, signs fixed by the third
    moment along each axis, handedness fixed to a proper rotation. Rotating
    the pocket rotates the frame with it.
    """
    xc = x_p - x_p.mean(axis=0)
    if x_p.shape[0] < 3:
        return np.eye(3)
    _, vecs = np.linalg.eigh(xc.T @ xc)
    vecs = vecs[:, ::-1].copy()
    for a in range(2):
        skew = ((xc @ vecs[:, a]) ** 3).sum()
        if skew < 0:
            vecs[:, a] = -vecs[:, a]
    vecs[:, 2] = np.cross(vecs[:, 0], vecs[:, 1])
    return vecs


def sample(pocket: Complex, n_atoms: int, weights: ModelWeights, sched: NoiseSchedule,
           rng: np.random.Generator, trace: list | None = None) -> SampledMolecule:
    """Generate a ligand with ``n_atoms`` atoms for ``pocket``.

    The pocket is centered on its protein center of mass for generation and
    the result is translated back. Coordinate noise is drawn in the pocket's
    principal-axis frame, so rotating the pocket rotates the sample.
    """
    if n_atoms < 1:
        raise ValueError("N_M must be >= 1")
    cfg = weights.config
    k = cfg.atom_types
    com = pocket.x_p.mean(axis=0)
    dummy_types = np.zeros((n_atoms, k))
    dummy_types[:, 0] = 1.0
    centered = Complex(pocket.x_p - com, pocket.v_p, np.zeros((n_atoms, 3)), dummy_types, pocket.name)
    frame = pocket_frame(centered.x_p)
    belief = BeliefState.prior(n_atoms, k)
    rhos = [belief.rho]
    for i in range(1, sched.n + 1):
        t = (i - 1) / sched.n
        try:
            out = backbone_forward(centered, belief.mu, belief.theta_v, t, weights)
        except ad.NumericError as exc:
            raise ad.NumericError(f"sampling step {i}: {exc}") from exc
        p_o = _row_softmax(out.logits.data)
        a, av = sched.alpha(i), sched.alpha_type(i)
        y_x = out.x_hat.data + (rng.standard_normal((n_atoms, 3)) @ frame.T) / np.sqrt(a)
        u = rng.random(n_atoms)
        drawn = np.minimum((p_o.cumsum(axis=1) < u[:, None]).sum(axis=1), k - 1)
        y_v = type_sender_mean(drawn, k, av) + rng.standard_normal((n_atoms, k)) * np.sqrt(av * k)
        belief.mu, belief.rho = bayes_update_coords(belief.mu, belief.rho, y_x, a)
        belief.theta_v = bayes_update_types(belief.theta_v, y_v)
        belief.step, belief.t = i, i / sched.n
        rhos.append(belief.rho)
        if trace is not None:
            trace.append((i, t, belief.rho))
    final = backbone_forward(centered, belief.mu, belief.theta_v, 1.0, weights)
    types = final.logits.data.argmax(axis=1)
    return SampledMolecule(final.x_hat.data + com, types, schedule=(sched.n, sched.sigma1_x, sched.beta1_v),
                           rho_trace=rhos)
