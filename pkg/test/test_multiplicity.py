import itertools

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from sabayes.model.errors import DomainError, PreconditionError
from sabayes.model.multiplicity import (
    CoverageLedger, bh_procedure, directional_calls, fcr_adjusted_cis, interval_coverage, two_sided_pvalues)


def test_bh_on_the_fixture(fixtures):
    p = pd.read_csv(fixtures / "pvalues.csv")["p"]
    result = bh_procedure(p, 0.1)
    assert result.rejected == (0, 1)
    assert result.r == 2
    assert result.m == 5
    assert result.threshold_p == pytest.approx(0.02)


def _largest_step_up(p, q):
    m = len(p)
    ordered = np.sort(p)
    passing = [i for i in range(1, m + 1) if ordered[i - 1] <= q * i / m]
    return max(passing) if passing else 0


@pytest.mark.parametrize("seed", range(6))
def test_bh_rejects_the_largest_passing_rank(seed):
    generator = np.random.default_rng(seed)
    m = generator.integers(1, 13)
    # a mix of small and uniform p-values so that both outcomes occur
    p = np.where(generator.random(m) < 0.4, generator.random(m) * 0.02, generator.random(m))
    result = bh_procedure(p, 0.1)
    k = _largest_step_up(p, 0.1)
    assert result.r == k
    assert sorted(result.rejected) == list(result.rejected)
    if k > 0:
        assert set(result.rejected) == set(np.flatnonzero(p <= np.sort(p)[k - 1]))


def test_bh_is_monotone_in_q():
    p = np.random.default_rng(3).random(200) ** 3
    counts = [bh_procedure(p, q).r for q in (0.01, 0.05, 0.1, 0.2)]
    assert counts == sorted(counts)


def test_bh_all_subsets_of_a_small_grid():
    grid = [0.001, 0.01, 0.03, 0.2]
    for p in itertools.product(grid, repeat=3):
        assert bh_procedure(p, 0.05).r == _largest_step_up(np.array(p), 0.05)


def test_bh_edge_cases():
    assert bh_procedure([], 0.1).r == 0
    assert bh_procedure([0.9, 0.95], 0.1).rejected == ()
    with pytest.raises(DomainError):
        bh_procedure([0.2, 1.2], 0.1)
    with pytest.raises(DomainError):
        bh_procedure([0.2], 0.0)


def test_two_sided_pvalues():
    np.testing.assert_allclose(two_sided_pvalues([-1.96, 0.0, 3.0]),
                               [2 * stats.norm.sf(1.96), 1.0, 2 * stats.norm.sf(3.0)])
    assert two_sided_pvalues(4.0, sigma=2.0) == pytest.approx(2 * stats.norm.sf(2.0))


def test_fcr_adjusted_intervals(fixtures):
    frame = pd.read_csv(fixtures / "selected.csv")
    selected = list(frame.itertuples(index=False, name=None))
    intervals = fcr_adjusted_cis(selected, 0.05, 100_000)
    z = stats.norm.isf(2 * 0.05 / 100_000 / 2)
    assert [index for index, _, _ in intervals] == [12647, 4]
    assert intervals[0][1] == pytest.approx(3.40 - z)
    assert intervals[0][2] == pytest.approx(3.40 + z)


def test_fcr_adjusted_intervals_need_selections():
    with pytest.raises(PreconditionError):
        fcr_adjusted_cis([], 0.05, 10)
    with pytest.raises(DomainError):
        fcr_adjusted_cis([(0, 1.0, 1.0), (1, 2.0, 1.0)], 0.5, 1)


def test_coverage_ledger():
    assert CoverageLedger(0, 0).FCP == 0.0
    assert CoverageLedger(4, 1).FCP == 0.25
    assert CoverageLedger(4).FCP is None
    with pytest.raises(DomainError):
        CoverageLedger(2, 3)


def test_directional_calls():
    calls, ledger = directional_calls([-3.0, 0.5, 2.5, 4.0], 2.0, theta=[-1.0, 0.2, -0.1, 0.0])
    np.testing.assert_array_equal(calls, [-1, 0, 1, 1])
    # theta = 0 counts as a wrong sign for a positive call
    assert (ledger.R, ledger.V) == (3, 2)
    _, unknown = directional_calls([-3.0, 0.5], 2.0)
    assert unknown.V is None


def test_interval_coverage():
    ledger = interval_coverage([0.0, 1.0, -2.0], [1.0, 2.0, -1.0], [0.5, 2.5, -1.0])
    assert (ledger.R, ledger.V) == (3, 1)
    assert ledger.FCP == pytest.approx(1 / 3)
