import time

import pytest

from pocketbfn import autodiff as ad
from pocketbfn.checks import SUITES, run_checks, suite_gradients


def test_quick_level_passes_within_a_minute():
    start = time.perf_counter()
    results = run_checks("quick")
    elapsed = time.perf_counter() - start
    assert [r.name for r in results] == list(SUITES)
    assert all(r.passed for r in results), [(r.name, r.detail) for r in results if not r.passed]
    assert elapsed < 60.0


@pytest.mark.parametrize("op", ["sigmoid", "matmul", "segment_softmax"])
def test_sign_flipped_rule_is_caught(monkeypatch, op):
    original = ad.RULES[op]

    def flipped(g, ctx):
        return tuple(None if x is None else -x for x in original(g, ctx))

    monkeypatch.setitem(ad.RULES, op, flipped)
    res = suite_gradients("quick")
    assert not res.passed and "failing" in res.detail


def test_unknown_level():
    with pytest.raises(ValueError):
        run_checks("thorough")


def test_crashing_suite_counts_as_failure(monkeypatch):
    def boom(level):
        raise RuntimeError("boom")

    monkeypatch.setitem(SUITES, "kl", boom)
    (res,) = run_checks("quick", only=["kl"])
    assert not res.passed and "boom" in res.detail
