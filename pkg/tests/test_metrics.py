import pytest
from hypothesis import given, strategies as st

from shp import metrics as M


def test_caf_examples():
    assert M.caf(2, 0, 0) == 2.0
    assert M.caf(4, 0, 0) == 4.0
    assert M.caf(8, 7, 0) == pytest.approx(8 / 7)
    assert M.caf(8, 7, 0) > 1


@given(st.sampled_from([2, 3, 4, 8]), st.integers(0, 7), st.integers(0, 7))
def test_caf_monotone(n, m, s):
    assert M.caf(n, m + 1, s) < M.caf(n, m, s) or m + s == 0
    assert M.caf(n, m, s + 1) < M.caf(n, m, s) or m + s == 0
    assert M.caf(n + 1, m, s) > M.caf(n, m, s)


def test_expected_attempts_and_bits():
    assert M.expected_attempts(8) == 256
    assert M.expected_attempts(0) == 1
    assert M.expected_attempts(2) == 4
    assert M.expected_bits_per_attempt(2) == 0.5
    assert M.expected_bits_per_attempt(8) == 0.03125
    vals = {n: M.expected_bits_per_attempt(n) for n in range(1, 17)}
    assert max(vals.values()) == vals[1] == vals[2] == 0.5


def test_phi_ratio():
    assert M.phi_ratio(0.415, 2) == pytest.approx(0.83)
    assert M.phi_ratio(M.expected_bits_per_attempt(4), 4) == 1.0


def test_fitness_cases():
    assert M.fitness(5.0, 10, 10, 0.9) == 0
    assert M.fitness(2.0, 95, 100, 2) == pytest.approx(1.9)
    assert M.fitness(3.0, 7, 7, 4) == 3.0
    assert M.fitness(3.0, 0, 0, 4) == 0


@given(st.just(0.0) | st.floats(1e-3, 1e4), st.integers(0, 100), st.integers(0, 100), st.floats(0.1, 8))
def test_fitness_bounded(bps, n_ecc, extra, caf):
    n_pr = n_ecc + extra
    f = M.fitness(bps, n_ecc, n_pr, caf)
    assert 0 <= f <= bps
    if caf <= 1 or n_pr == 0 or n_ecc == 0:
        assert f == 0
    elif bps > 0:
        assert f > 0


def test_sbw():
    assert M.sbw(1e6, 1000) == 1000
    assert M.sbw(1e6, None) is None
    assert M.sbw(2e6, 1000) == 2 * M.sbw(1e6, 1000)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6, 7, 8])
def test_geometric_law_monte_carlo(n):
    d = M.geometric_trials(n, 10**6, seed=n)
    assert d.mean() == pytest.approx(2 ** n, rel=0.05)


def test_metric_set_check():
    ms = M.MetricSet(2.0, 4, 0.5, 0.9, 4.0, 10.0, 1.0, 1.0)
    ms.check()
    assert ms.labeled()["bps"] == {"value": 1.0, "unit": "bits/s"}
    with pytest.raises(ValueError):
        M.MetricSet(1.0, 4, 0.5, 0.9, 4.0, 10.0, 1.0, 1.0).check()
