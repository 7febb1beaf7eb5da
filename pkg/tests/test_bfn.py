import itertools
from types import SimpleNamespace

import numpy as np
import pytest

from pocketbfn import autodiff as ad
from pocketbfn import bfn, metrics
from pocketbfn.checks import mc_kl_gaussian, random_complex, small_config
from pocketbfn.geometry import center_by_protein_com, random_rotation
from pocketbfn.model import ModelWeights


def make_ligand(seed=0, n_p=8, n_m=3):
    return center_by_protein_com(random_complex(np.random.default_rng(seed), n_p, n_m))


# ------------------------------------------------------------ schedule

def test_single_step_schedule():
    s = bfn.schedule_new(1, 0.03, 2.5)
    assert s.alpha(1) == pytest.approx(0.03 ** -2 - 1, rel=1e-12)
    assert s.alpha_type(1) == 2.5


@pytest.mark.parametrize("n", [1, 10, 100, 1000])
def test_telescoping_sums(n):
    s = bfn.schedule_new(n, 0.03, 1.7)
    # geometric and arithmetic series in closed form
    assert abs(1 + s.alpha_x.sum() - 0.03 ** -2) / 0.03 ** -2 <= 1e-9
    assert abs(s.alpha_v.sum() - 1.7) <= 1e-12
    assert np.all(s.alpha_x > 0) and np.all(s.alpha_v > 0)


@pytest.mark.parametrize("args", [(0, 0.03, 1.0), (10, 1.0, 1.0), (10, 0.0, 1.0), (10, 0.03, 0.0), (2.5, 0.1, 1.0)])
def test_schedule_rejects_bad_arguments(args):
    with pytest.raises(bfn.ScheduleError):
        bfn.schedule_new(*args)


# ------------------------------------------------------------ sender / flow

def test_sender_degenerates_at_huge_accuracy():
    m = make_ligand()
    y_x, _ = bfn.sample_sender(m, bfn.schedule_new(10), 1, np.random.default_rng(0), alpha=1e12)
    assert np.abs(y_x - m.x_m).max() <= 1e-5


def test_sender_type_mean_monte_carlo():
    m = make_ligand(1, n_m=1)
    rng = np.random.default_rng(2)
    av, k, n = 0.7, m.atom_types, 100_000
    s = bfn.schedule_new(10)
    y = np.stack([bfn.sample_sender(m, s, 1, rng, alpha=1.0, alpha_v=av)[1][0] for _ in range(n)])
    expect = av * (k * m.v_m[0] - 1.0)
    assert np.all(np.abs(y.mean(axis=0) - expect) <= 3 * np.sqrt(av * k / n))


def test_sender_seeded():
    m, s = make_ligand(), bfn.schedule_new(10)
    a = bfn.sample_sender(m, s, 3, np.random.default_rng(5))
    b = bfn.sample_sender(m, s, 3, np.random.default_rng(5))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_flow_state_prior_at_zero():
    m = make_ligand()
    b = bfn.flow_state(m, bfn.schedule_new(10), 0.0, np.random.default_rng(0))
    assert np.array_equal(b.mu, np.zeros_like(m.x_m)) and b.rho == 1.0
    np.testing.assert_array_equal(b.theta_v, np.full(b.theta_v.shape, 1.0 / m.atom_types))


def test_flow_state_terminal_spread():
    m = make_ligand(n_m=1)
    s = bfn.schedule_new(10, 0.03)
    rng = np.random.default_rng(3)
    mus = np.stack([bfn.flow_state(m, s, 1.0, rng).mu[0] for _ in range(20_000)])
    g = 1 - 0.03 ** 2
    np.testing.assert_allclose(mus.std(axis=0), np.sqrt(g * (1 - g)), rtol=0.03)
    np.testing.assert_allclose(mus.mean(axis=0), g * m.x_m[0], atol=0.002)


def test_flow_state_rejects_t_outside_unit_interval():
    with pytest.raises(ValueError):
        bfn.flow_state(make_ligand(), bfn.schedule_new(10), 1.5, np.random.default_rng(0))


# ------------------------------------------------------------ updates

def test_coordinate_update_limits_and_formula():
    rng = np.random.default_rng(0)
    mu, y = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    assert bfn.bayes_update_coords(mu, 2.0, y, 0.0) == (pytest.approx(mu), 2.0)
    m2, r2 = bfn.bayes_update_coords(mu, 2.0, y, 1e12)
    assert np.abs(m2 - y).max() <= 1e-6 and r2 == 2.0 + 1e12
    m3, _ = bfn.bayes_update_coords(mu, 1.3, y, 0.4)
    np.testing.assert_allclose(m3, (1.3 * mu + 0.4 * y) / 1.7, atol=1e-12)


def test_type_update():
    rng = np.random.default_rng(1)
    theta = rng.dirichlet(np.ones(6), 5)
    np.testing.assert_allclose(bfn.bayes_update_types(theta, np.zeros((5, 6))), theta, atol=1e-15)
    y = np.zeros((1, 6))
    y[0, 2] = 20.0
    assert bfn.bayes_update_types(np.full((1, 6), 1 / 6), y)[0, 2] > 0.999
    for _ in range(20):
        theta = bfn.bayes_update_types(theta, rng.normal(0, 3, (5, 6)))
        assert np.all(theta >= 0) and np.abs(theta.sum(axis=1) - 1).max() <= 1e-12


def test_output_distribution():
    logits = np.random.default_rng(2).normal(size=(4, 6))
    _, p = bfn.output_distribution(None, logits)
    np.testing.assert_allclose(p.data.sum(axis=1), 1.0, atol=1e-12)
    assert np.array_equal(p.data.argmax(axis=1), logits.argmax(axis=1))
    _, u = bfn.output_distribution(None, np.zeros((2, 6)))
    np.testing.assert_allclose(u.data, 1 / 6)


# ------------------------------------------------------------ losses

def test_loss_coords_examples():
    x = np.zeros((1, 3))
    assert bfn.loss_coords(x, ad.constant(x), 3.0).item() == 0.0
    assert bfn.loss_coords(x, ad.constant(np.array([[1.0, 0, 0]])), 2.0).item() == 1.0


def test_loss_coords_matches_monte_carlo():
    rng = np.random.default_rng(4)
    x, xh, a = rng.normal(size=(3, 3)), rng.normal(size=(3, 3)), 1.3
    mc = mc_kl_gaussian(x, xh, a, 100_000, rng)
    assert abs(mc - bfn.loss_coords(x, ad.constant(xh), a).item()) / mc <= 0.02


def test_loss_types_zero_for_one_hot_truth():
    v = np.array([0, 3, 5])
    rng = np.random.default_rng(5)
    logits = np.full((3, 6), -50.0)
    logits[np.arange(3), v] = 50.0
    vals = [bfn.loss_types(v, ad.constant(logits), 0.6, 6, rng).item() for _ in range(2000)]
    assert abs(np.mean(vals)) <= 3 * np.std(vals) / np.sqrt(len(vals)) + 1e-12


def test_loss_types_nonnegative_in_expectation():
    v = np.array([1, 2])
    rng = np.random.default_rng(6)
    logits = rng.normal(size=(2, 6))
    vals = np.array([bfn.loss_types(v, ad.constant(logits), 0.6, 6, rng).item() for _ in range(2000)])
    assert vals.mean() >= -3 * vals.std() / np.sqrt(len(vals))


def test_loss_types_draws_average():
    v = np.array([1, 4])
    logits = np.random.default_rng(7).normal(size=(2, 6))
    one = bfn.loss_types(v, ad.constant(logits), 0.5, 6, np.random.default_rng(8)).item()
    again = bfn.loss_types(v, ad.constant(logits), 0.5, 6, np.random.default_rng(8)).item()
    assert one == again
    with pytest.raises(ValueError):
        bfn.loss_types(v, ad.constant(logits), 0.5, 6, np.random.default_rng(8), draws=0)


def test_probability_variant_agrees_with_logits():
    v = np.array([2, 0, 1])
    logits = np.random.default_rng(9).normal(size=(3, 6))
    a = bfn.loss_types(v, ad.constant(logits), 0.8, 6, np.random.default_rng(10)).item()
    b = bfn.loss_types_from_probs(v, bfn._row_softmax(logits), 0.8, np.random.default_rng(10))
    assert a == pytest.approx(b, abs=1e-10)


def test_loss_total():
    assert bfn.loss_total(ad.constant(np.array(0.0)), ad.constant(np.array(0.0))).item() == 0.0
    a, b = ad.parameter(np.array(1.5)), ad.parameter(np.array(0.5))
    total = bfn.loss_total(a, b)
    assert total.item() == 2.0
    ga, gb = ad.gradients(total, [a, b])
    assert ga == 1.0 and gb == 1.0


# ------------------------------------------------------------ training

def tiny_weights(seed=0):
    return ModelWeights.init(small_config(hidden_dim=8, n_heads=2, knn_k=6), np.random.default_rng(seed))


def test_zero_learning_rate_keeps_weights():
    w = tiny_weights()
    before = [t.data.copy() for t in w.parameters()]
    opt = bfn.AdamState(w.parameters(), lr=0.0)
    bfn.train_step([make_ligand(1), make_ligand(2)], w, bfn.schedule_new(20), opt,
                   [np.random.default_rng(i) for i in range(2)])
    assert all(np.array_equal(a, t.data) for a, t in zip(before, w.parameters()))


def run_steps(threads, n=3):
    w = tiny_weights(1)
    opt = bfn.AdamState(w.parameters())
    batch = [make_ligand(3), make_ligand(4)]
    return [bfn.train_step(batch, w, bfn.schedule_new(20), opt,
                           [np.random.default_rng([k, j]) for j in range(2)], threads=threads).loss
            for k in range(n)]


def test_training_is_deterministic_and_thread_independent():
    a, b, c = run_steps(1), run_steps(1), run_steps(2)
    assert a == b == c


def test_gradient_clipping():
    grads, norm = bfn.clip_global_norm([np.full(4, 3.0), np.full(1, 4.0)], 1.0)
    assert norm == pytest.approx(np.sqrt(52.0))
    assert np.sqrt(sum((g ** 2).sum() for g in grads)) == pytest.approx(1.0)


def test_evaluate_loss_is_fixed():
    w, c = tiny_weights(2), make_ligand(5)
    s = bfn.schedule_new(20)
    assert bfn.evaluate_loss([c], w, s, seed=1) == bfn.evaluate_loss([c], w, s, seed=1)


# ------------------------------------------------------------ sampling

def test_sample_invariants():
    w, pocket = tiny_weights(3), make_ligand(6)
    trace = []
    s = bfn.schedule_new(15, 0.03, 1.0)
    m = bfn.sample(pocket, 4, w, s, np.random.default_rng(0), trace=trace)
    assert m.x.shape == (4, 3) and m.types.shape == (4,)
    assert abs(m.rho_trace[-1] - 0.03 ** -2) / 0.03 ** -2 <= 1e-6
    assert np.all(np.diff(m.rho_trace) > 0)
    assert [r[0] for r in trace] == list(range(1, 16))


def test_single_step_sample_runs():
    m = bfn.sample(make_ligand(7), 2, tiny_weights(4), bfn.schedule_new(1), np.random.default_rng(1))
    assert np.all(np.isfinite(m.x))


def test_sample_rejects_empty_ligand():
    with pytest.raises(ValueError, match="N_M must be >= 1"):
        bfn.sample(make_ligand(), 0, tiny_weights(), bfn.schedule_new(5), np.random.default_rng(0))


def test_sample_is_seeded():
    w, p, s = tiny_weights(5), make_ligand(8), bfn.schedule_new(10)
    a = bfn.sample(p, 3, w, s, np.random.default_rng(9))
    b = bfn.sample(p, 3, w, s, np.random.default_rng(9))
    assert np.array_equal(a.x, b.x) and np.array_equal(a.types, b.types)


def test_rotated_pocket_gives_rotated_sample():
    w, p, s = tiny_weights(6), make_ligand(9, n_p=10), bfn.schedule_new(20)
    rng = np.random.default_rng(11)
    rot, shift = random_rotation(rng), rng.normal(0, 3, 3)
    a = bfn.sample(p, 3, w, s, np.random.default_rng(12))
    b = bfn.sample(p.transformed(rot, shift), 3, w, s, np.random.default_rng(12))
    np.testing.assert_allclose(b.x, a.x @ rot.T + shift, atol=1e-5)
    assert np.array_equal(a.types, b.types)


def test_sampler_recovers_truth_with_exact_denoiser(monkeypatch):
    """With the Bayes-optimal denoiser for a one-complex dataset the sampler
    must land on the reference ligand (up to atom order)."""
    c = make_ligand(10, n_p=8, n_m=3)
    s = bfn.schedule_new(100, 0.03, 1.0)
    perms = np.stack([c.x_m[list(p)] for p in itertools.permutations(range(3))])
    logit = np.log(np.full(6, 1e-9))

    def exact(pocket, mu, theta, t, weights):
        g = s.gamma(t)
        if g <= 0.0:
            xh = perms.mean(axis=0)
        else:
            ll = -((mu[None] - g * perms) ** 2).sum(axis=(1, 2)) / (2 * g * (1 - g))
            p = np.exp(ll - ll.max())
            xh = np.einsum("p,pij->ij", p / p.sum(), perms)
        lg = np.tile(logit, (len(mu), 1))
        lg[:, 0] = 0.0
        return SimpleNamespace(x_hat=ad.constant(xh), logits=ad.constant(lg))

    monkeypatch.setattr(bfn, "backbone_forward", exact)
    w = SimpleNamespace(config=SimpleNamespace(atom_types=6))
    for seed in range(3):
        m = bfn.sample(c, 3, w, s, np.random.default_rng(seed))
        assert metrics.matched_rmsd(m.x, c.x_m) < 1e-3
