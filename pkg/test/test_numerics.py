import numpy as np
import pytest
from scipy import stats

from sabayes.model.errors import BracketingError, DomainError, NumericError
from sabayes.model.numerics import (
    Grid, RngStream, cumulative, find_root, integrate, normal_cdf, normal_pdf, normal_quantile, richardson_delta,
    t_cdf, t_quantile)


def test_normal_cdf_and_quantile():
    assert normal_cdf(0.0) == 0.5
    assert normal_quantile(0.975) == pytest.approx(1.959963984540054, abs=1e-12)
    np.testing.assert_allclose(normal_cdf(np.array([-1.0, 1.0])), [0.15865525393145707, 0.8413447460685429])


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_normal_quantile_outside_unit_interval(p):
    with pytest.raises(DomainError):
        normal_quantile(p)


def test_t_cdf_matches_scipy_for_fractional_degrees():
    x = np.linspace(-6, 6, 25)
    np.testing.assert_allclose(t_cdf(x, 7.02), stats.t.cdf(x, 7.02), rtol=1e-12)
    assert t_cdf(0.0, 3) == 0.5


def test_t_cdf_rejects_nonpositive_degrees():
    with pytest.raises(DomainError):
        t_cdf(1.0, 0.0)


def test_raw_t_critical_value():
    # the |t| one gene of 8448 needs for a BH discovery at q = 0.1 with 3 df
    assert t_quantile(1 - 0.1 / 16896, 3) == pytest.approx(57.10, abs=0.05)


def test_t_quantile_inverts_t_cdf():
    for p in (0.01, 0.3, 0.9):
        assert t_cdf(t_quantile(p, 4.5), 4.5) == pytest.approx(p, abs=1e-12)


@pytest.mark.parametrize("scheme, n", [("trapezoid", 10), ("trapezoid", 4001), ("simpson", 11), ("simpson", 801)])
def test_grid_weights_sum_to_width(scheme, n):
    grid = Grid(-2.0, 3.0, n, scheme)
    assert grid.weights.sum() == pytest.approx(5.0, rel=1e-12)
    assert len(grid) == n


def test_grid_rejects_bad_layouts():
    with pytest.raises(DomainError):
        Grid(1.0, 1.0)
    with pytest.raises(DomainError):
        Grid(0.0, 1.0, 10, "simpson")
    with pytest.raises(DomainError):
        Grid(0.0, np.inf)


def test_aligned_grid_keeps_zero_on_a_node():
    grid = Grid.aligned(-0.733, 1.41, 0.01)
    assert grid.lo <= -0.733 and grid.hi >= 1.41
    assert np.min(np.abs(grid.nodes)) < 1e-12
    assert grid.spacing == pytest.approx(0.01)


def test_simpson_aligned_grid_has_odd_node_count():
    assert Grid.aligned(0.0, 1.0, 0.1, "simpson").n % 2 == 1


def test_integrate_normal_density():
    assert integrate(normal_pdf, Grid(-10, 10)) == pytest.approx(1.0, abs=1e-8)
    assert integrate(normal_pdf, Grid(-10, 10, 801, "simpson")) == pytest.approx(1.0, abs=1e-8)


def test_richardson_delta_is_small_for_smooth_integrands():
    assert richardson_delta(normal_pdf, Grid(-10, 10)) < 1e-8


def test_integrate_rejects_non_finite_integrands():
    with pytest.raises(NumericError) as error:
        integrate(lambda x: 1 / x, Grid(-1, 1, 3))
    assert error.value.location == 0.0


def test_cumulative_ends_at_the_integral():
    grid = Grid(-8, 8)
    running = cumulative(normal_pdf, grid)
    assert running[0] == 0.0
    assert running[-1] == pytest.approx(integrate(normal_pdf, grid), rel=1e-12)
    assert running[grid.n // 2] == pytest.approx(0.5, abs=1e-8)


def test_find_root():
    assert find_root(lambda x: x ** 3 - 0.027, 0.0, 1.0, tol=1e-10) == pytest.approx(0.3, abs=1e-9)
    assert find_root(lambda x: x, 0.0, 1.0) == 0.0


def test_find_root_needs_a_sign_change():
    with pytest.raises(BracketingError):
        find_root(lambda x: x * x + 1, -1.0, 1.0)


def test_rng_stream_is_reproducible():
    first = RngStream(7).generator().standard_normal(5)
    again = RngStream(7).generator().standard_normal(5)
    np.testing.assert_array_equal(first, again)


def test_rng_substreams_are_distinct():
    stream = RngStream(7)
    draws = [stream.substream(i).generator().standard_normal(3) for i in range(3)]
    assert not np.array_equal(draws[0], draws[1])
    assert not np.array_equal(draws[0], stream.generator().standard_normal(3))
    np.testing.assert_array_equal(draws[2], RngStream(7).substream(2).generator().standard_normal(3))


def test_rng_seed_must_be_unsigned():
    with pytest.raises(DomainError):
        RngStream(-1)
