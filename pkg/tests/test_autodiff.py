import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pocketbfn import autodiff as ad


def numeric_grad(f, x, eps=1e-6):
    """Central differences of scalar ``f`` at numpy array ``x``."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        up = f(x)
        x[i] = old - eps
        down = f(x)
        x[i] = old
        g[i] = (up - down) / (2 * eps)
    return g


def check_op(build, *shapes, seed=0, positive=False, tol=1e-6):
    """Gradient of ``sum(build(*inputs) * R)`` against central differences."""
    rng = np.random.default_rng(seed)
    xs = [rng.uniform(0.5, 2.0, s) if positive else rng.normal(size=s) for s in shapes]
    out_shape = build(*[ad.constant(x) for x in xs]).shape
    R = rng.normal(size=out_shape)

    def scalar(*arrs):
        return float((build(*[ad.constant(a) for a in arrs]).data * R).sum())

    params = [ad.parameter(x.copy()) for x in xs]
    ad.sum(ad.mul(build(*params), ad.constant(R))).backward()
    for k, x in enumerate(xs):
        def fk(v, k=k):
            args = [a.copy() for a in xs]
            args[k] = v
            return scalar(*args)
        num = numeric_grad(fk, x.copy())
        np.testing.assert_allclose(params[k].grad, num, rtol=tol, atol=tol)


SEG = np.array([0, 0, 1, 2, 2, 2, 0])


@pytest.mark.parametrize("name,build,shapes,positive", [
    ("add", ad.add, [(3, 4), (3, 4)], False),
    ("add_bias", ad.add, [(3, 4), (4,)], False),
    ("sub", ad.sub, [(3, 4), (3, 4)], False),
    ("mul", ad.mul, [(3, 4), (3, 4)], False),
    ("matmul", ad.matmul, [(3, 4), (4, 2)], False),
    ("rowscale", ad.rowscale, [(5, 3), (5,)], False),
    ("transpose", ad.transpose, [(3, 4)], False),
    ("reshape", lambda x: ad.reshape(x, (6, 2)), [(3, 4)], False),
    ("concat", lambda a, b: ad.concat([a, b], axis=1), [(3, 2), (3, 4)], False),
    ("take_rows", lambda x: ad.take_rows(x, [2, 0, 2, 1]), [(3, 4)], False),
    ("scatter_rows", lambda x: ad.scatter_rows(x, [1, 0, 1, 3], 4), [(4, 2)], False),
    ("slice_rows", lambda x: ad.slice_rows(x, 1, 3), [(4, 2)], False),
    ("sigmoid", ad.sigmoid, [(3, 4)], False),
    ("exp", ad.exp, [(3, 4)], False),
    ("log", ad.log, [(3, 4)], True),
    ("sqrt", ad.sqrt, [(3, 4)], True),
    ("square", ad.square, [(3, 4)], False),
    ("sum_axis0", lambda x: ad.sum(x, axis=0), [(3, 4)], False),
    ("sum_axis1", lambda x: ad.sum(x, axis=1), [(3, 4)], False),
    ("mean", ad.mean, [(3, 4)], False),
    ("softmax0", lambda x: ad.softmax_axis(x, 0), [(3, 4)], False),
    ("softmax1", lambda x: ad.softmax_axis(x, 1), [(3, 4)], False),
    ("log_softmax", lambda x: ad.log_softmax(x, 1), [(3, 4)], False),
    ("logsumexp", lambda x: ad.logsumexp(x, 1), [(3, 4)], False),
    ("layer_norm", lambda x, g, b: ad.layer_norm(x, g, b), [(3, 5), (5,), (5,)], False),
    ("segment_softmax", lambda x: ad.segment_softmax(x, SEG, 3), [(7,)], False),
    ("rbf", lambda d: ad.rbf_expand(d, np.linspace(0, 3, 5), 0.5), [(6,)], True),
    ("clip_row_norm", lambda x: ad.clip_row_norm(ad.scale(x, 3.0), 2.0), [(5, 3)], False),
])
def test_backward_rule_matches_finite_differences(name, build, shapes, positive):
    check_op(build, *shapes, positive=positive)


def test_relu_gradient_away_from_kink():
    x = np.array([[-1.0, 0.5], [2.0, -0.3]])
    p = ad.parameter(x)
    ad.sum(ad.relu(p)).backward()
    np.testing.assert_array_equal(p.grad, [[0.0, 1.0], [1.0, 0.0]])


def test_shared_subexpression_accumulates():
    p = ad.parameter(np.array([1.5, -2.0]))
    y = ad.mul(p, p)
    ad.sum(ad.add(y, y)).backward()
    np.testing.assert_allclose(p.grad, 4 * p.data)


def test_shape_mismatch_raises():
    with pytest.raises(ad.DimensionError):
        ad.add(ad.constant(np.ones((2, 3))), ad.constant(np.ones((3, 2))))
    with pytest.raises(ad.DimensionError):
        ad.mul(ad.constant(np.ones((2, 3))), ad.constant(np.ones(3)))
    with pytest.raises(ad.DimensionError):
        ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 3))))


def test_only_row_bias_broadcasts():
    out = ad.add(ad.constant(np.zeros((2, 3))), ad.constant(np.array([1.0, 2.0, 3.0])))
    np.testing.assert_array_equal(out.data, [[1, 2, 3], [1, 2, 3]])
    with pytest.raises(ad.DimensionError):
        ad.add(ad.constant(np.zeros((2, 3))), ad.constant(np.ones((1, 3))))


def test_non_finite_output_raises():
    with pytest.raises(ad.NumericError):
        ad.log(ad.constant(np.array([0.0, 1.0])))
    with pytest.raises(ad.NumericError):
        ad.exp(ad.constant(np.array([1000.0])))


def test_second_backward_raises():
    p = ad.parameter(np.ones(3))
    loss = ad.sum(ad.square(p))
    loss.backward()
    with pytest.raises(ad.GradientError):
        loss.backward()


def test_backward_needs_scalar():
    p = ad.parameter(np.ones(3))
    with pytest.raises(ad.GradientError):
        ad.square(p).backward()


def test_gradients_leaves_grad_untouched():
    p = ad.parameter(np.array([1.0, 2.0]))
    (g,) = ad.gradients(ad.sum(ad.square(p)), [p])
    np.testing.assert_allclose(g, [2.0, 4.0])
    assert p.grad is None


def test_unreached_parameter_gets_zero():
    p, q = ad.parameter(np.ones(2)), ad.parameter(np.ones(3))
    gp, gq = ad.gradients(ad.sum(p), [p, q])
    np.testing.assert_array_equal(gq, np.zeros(3))


def test_segment_sum_matches_loop():
    rng = np.random.default_rng(3)
    idx = rng.integers(0, 5, 40)
    vals = rng.normal(size=(40, 3))
    expect = np.zeros((5, 3))
    for e in range(40):
        expect[idx[e]] += vals[e]
    np.testing.assert_allclose(ad.segment_sum(vals, idx, 5), expect, atol=1e-12)
    np.testing.assert_allclose(ad.segment_sum(vals[:, 0], idx, 5), expect[:, 0], atol=1e-12)


def test_segment_softmax_sums_to_one_per_segment():
    s = ad.segment_softmax(ad.constant(np.array([1.0, 2.0, 3.0, -1.0, 0.0, 5.0, 4.0])), SEG, 3).data
    for k in range(3):
        assert abs(s[SEG == k].sum() - 1.0) < 1e-12


def test_deep_chain_does_not_recurse():
    p = ad.parameter(np.array([1.0]))
    x = p
    for _ in range(5000):
        x = ad.add(x, 0.001)
    ad.sum(x).backward()
    assert p.grad[0] == 1.0


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(-20, 20)))
def test_softmax_rows_on_simplex(x):
    s = ad.softmax_axis(ad.constant(x), axis=1).data
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-5, 5)), st.floats(0.1, 3.0))
def test_linear_ops_have_constant_gradient(x, c):
    p = ad.parameter(x)
    ad.sum(ad.scale(p, c)).backward()
    np.testing.assert_allclose(p.grad, np.full_like(x, c))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (6,), elements=st.floats(-30, 30)))
def test_logsumexp_stable_and_bounded(x):
    v = ad.logsumexp(ad.constant(x), axis=0).item()
    assert x.max() <= v <= x.max() + np.log(x.size) + 1e-12
