import numpy as np
import pytest
from scipy import stats

from sabayes.model.distributions import (
    ConditionalPrior, Discrete, Fixed, Flat, Laplace, Mixed, Normal, NormalLocation, PointMass, Random, TwoGroup)
from sabayes.model.errors import DomainError, ImproperPosteriorError, PreconditionError, UnsupportedCombinationError
from sabayes.model.numerics import Grid
from sabayes.model.posterior import (
    PosteriorGrid, compound_selection_posterior, credible_interval_coverage, credible_intervals, freq_selective_ci,
    posterior_expected_loss, sa_posterior, selective_pvalue, summarize, unadjusted_posterior)
from sabayes.model.selection import OneSided, TwoSided, WholeSpace, selection_probability
from sabayes.model.simulation import laplace_rate_mixture

LIK = NormalLocation(1.0)
EXAMPLE_RULE = TwoSided(3.111)


def test_normal_summary():
    grid = Grid(-9.5, 10.5, 20001)
    post = PosteriorGrid.from_kernel(grid, stats.norm.logpdf(grid.nodes, 0.5, np.sqrt(0.5)))
    summary = summarize(post, 0.95)
    half = stats.norm.ppf(0.975) * np.sqrt(0.5)
    assert summary.mean == pytest.approx(0.5, abs=1e-8)
    assert summary.mode == pytest.approx(0.5, abs=1e-6)
    assert summary.ci_lo == pytest.approx(0.5 - half, abs=1e-4)
    assert summary.ci_hi == pytest.approx(0.5 + half, abs=1e-4)
    assert post.cdf(summary.ci_hi) - post.cdf(summary.ci_lo) == pytest.approx(0.95, abs=1e-4)


def test_summary_level_must_be_a_probability():
    post = unadjusted_posterior(Normal(), LIK, 0.0)
    with pytest.raises(DomainError):
        summarize(post, 1.0)


@pytest.mark.parametrize("kind, expected, tolerance", [
    (Random(), 0.5, 1e-4),
    (Fixed(), 0.10, 0.02),
    (Mixed(Normal(0.0, 0.5), ConditionalPrior("normal_mean", 0.5)), 0.33, 0.02),
])
def test_effect_kinds_at_y_equal_one(kind, expected, tolerance):
    post = sa_posterior(kind, Normal(0.0, 1.0), LIK, OneSided(0.0), 1.0)
    assert post.total_mass() == pytest.approx(1.0, abs=1e-6)
    assert post.mean() == pytest.approx(expected, abs=tolerance)


def test_random_posterior_ignores_the_rule():
    prior = laplace_rate_mixture()
    adjusted = sa_posterior(Random(), prior, LIK, EXAMPLE_RULE, 3.40)
    plain = unadjusted_posterior(prior, LIK, 3.40)
    theta = np.linspace(-2, 6, 81)
    np.testing.assert_allclose(adjusted.density_at(theta), plain.density_at(theta), rtol=1e-10)


def test_fixed_posterior_divides_by_the_selection_probability():
    prior = Normal(0.0, 2.0)
    post = sa_posterior(Fixed(), prior, LIK, EXAMPLE_RULE, 3.40)
    theta = post.nodes
    kernel = prior.density(theta) * LIK.density(3.40, theta) / selection_probability(EXAMPLE_RULE, LIK, theta)
    kernel /= np.dot(post.grid.weights, kernel)
    np.testing.assert_allclose(post.density, kernel, rtol=1e-8)


def test_mixed_with_a_point_mass_hyperprior_is_random():
    # a known hyperparameter leaves a single constant Pr(S | lambda)
    mixed = Mixed(PointMass(1.0), ConditionalPrior("laplace_rate"))
    a = sa_posterior(mixed, None, LIK, EXAMPLE_RULE, 3.40)
    b = sa_posterior(Random(), Laplace(1.0), LIK, EXAMPLE_RULE, 3.40)
    assert a.mean() == pytest.approx(b.mean(), abs=1e-6)


def test_mixed_with_constant_selection_probability_is_random():
    # Pr(|y| > 0 | lambda) = 1 for every lambda
    mixed = Mixed(Discrete((10.0, 1.0), (0.9, 0.1)), ConditionalPrior("laplace_rate"))
    a = sa_posterior(mixed, None, LIK, WholeSpace(), 2.0)
    b = sa_posterior(Random(), laplace_rate_mixture(), LIK, WholeSpace(), 2.0)
    assert a.mean() == pytest.approx(b.mean(), abs=1e-6)


def test_one_sided_selection_shifts_the_fixed_posterior_down():
    fixed = sa_posterior(Fixed(), Normal(), LIK, OneSided(0.0), 1.0)
    plain = unadjusted_posterior(Normal(), LIK, 1.0)
    theta = np.linspace(-3, 3, 61)
    assert np.all(fixed.cdf(theta) >= plain.cdf(theta) - 1e-6)


def test_flat_unadjusted_interval():
    summary = summarize(unadjusted_posterior(Flat(), LIK, 3.40), 0.95)
    assert (summary.ci_lo, summary.ci_hi) == (pytest.approx(1.44, abs=0.01), pytest.approx(5.36, abs=0.01))


@pytest.mark.parametrize("kind, prior, y, mean, mode, ci", [
    (Fixed(), Flat(), 3.40, 1.88, 0.74, (-0.04, 4.64)),
    (Random(), laplace_rate_mixture(), 3.40, 1.68, 2.40, (-0.11, 4.20)),
    (Fixed(), Flat(), 5.59, 5.48, 5.57, (3.26, 7.52)),
    (Random(), laplace_rate_mixture(), 5.59, 4.59, 4.59, (2.62, 6.55)),
])
def test_selected_observation_summaries(kind, prior, y, mean, mode, ci):
    summary = summarize(sa_posterior(kind, prior, LIK, EXAMPLE_RULE, y), 0.95)
    assert summary.mean == pytest.approx(mean, abs=0.02)
    assert summary.mode == pytest.approx(mode, abs=0.02)
    assert summary.ci_lo == pytest.approx(ci[0], abs=0.02)
    assert summary.ci_hi == pytest.approx(ci[1], abs=0.02)


def test_random_posterior_is_bimodal():
    post = sa_posterior(Random(), laplace_rate_mixture(), LIK, EXAMPLE_RULE, 3.40)
    smooth, cusps = post.modes()
    assert [location for location, _ in cusps] == [pytest.approx(0.0, abs=1e-9)]
    assert smooth[0][0] == pytest.approx(2.40, abs=0.02)


def test_one_sided_flat_posterior():
    post = sa_posterior(Fixed(), Flat(), LIK, OneSided(3.111), 3.40)
    summary = summarize(post, 0.95)
    assert summary.mode == pytest.approx(0.19, abs=0.02)
    assert summary.mean == pytest.approx(-2.87, abs=0.02)
    assert summary.ci_lo == pytest.approx(-15.41, abs=0.05)
    assert summary.ci_hi == pytest.approx(3.91, abs=0.05)
    left, right = post.density_at(np.array([-5.87, 3.40]))
    assert left == pytest.approx(right, rel=0.01)


def test_random_flat_prior_is_treated_as_fixed():
    a = sa_posterior(Random(), Flat(), LIK, EXAMPLE_RULE, 3.40)
    assert a.diagnostics["kind"] == "fixed"


def test_posterior_requires_a_selected_observation():
    with pytest.raises(PreconditionError):
        sa_posterior(Fixed(), Flat(), LIK, EXAMPLE_RULE, 1.0)


def test_improper_posterior_is_reported():
    # with y just above the cutoff the left tail decays like exp((y - a) theta)
    with pytest.raises(ImproperPosteriorError) as error:
        sa_posterior(Fixed(), Flat(), LIK, OneSided(3.111), 3.1111)
    assert error.value.tail == "left"


def test_two_group_prior_keeps_the_null_atom():
    post = sa_posterior(Random(), TwoGroup(0.9, Normal(0.0, 4.0)), LIK, EXAMPLE_RULE, 3.40)
    assert len(post.atoms) == 1
    location, mass = post.atoms[0]
    assert location == 0.0
    null = 0.9 * LIK.density(3.40, 0.0)
    alt = 0.1 * stats.norm.pdf(3.40, 0.0, np.sqrt(5.0))
    assert mass == pytest.approx(null / (null + alt), rel=1e-5)
    assert post.total_mass() == pytest.approx(1.0, abs=1e-6)


def test_posterior_expected_directional_loss():
    post = unadjusted_posterior(Normal(), LIK, 1.0)
    assert posterior_expected_loss(post, "directional", 1.0) == \
        pytest.approx(stats.norm.cdf(-0.5 / np.sqrt(0.5)), abs=1e-5)
    assert posterior_expected_loss(unadjusted_posterior(Normal(), LIK, 0.0), "directional", 0.0) == \
        pytest.approx(0.5, abs=1e-6)


@pytest.mark.parametrize("y, expected", [(3.111, 0.176), (3.472, 0.10), (0.0, 0.5)])
def test_posterior_expected_loss_under_the_example_prior(y, expected):
    post = sa_posterior(Random(), laplace_rate_mixture(), LIK, WholeSpace(), y)
    assert posterior_expected_loss(post, "directional", y) == pytest.approx(expected, abs=0.005)


@pytest.mark.parametrize("rule, interval", [
    (TwoSided(3.111), (-0.37, 5.03)),
    (OneSided(3.111), (-9.44, 5.03)),
    (WholeSpace(), (3.40 - 1.959964, 3.40 + 1.959964)),
])
def test_selective_confidence_intervals(rule, interval):
    result = freq_selective_ci(LIK, rule, 3.40, 0.05)
    assert not result.warning
    assert result.lo == pytest.approx(interval[0], abs=0.05)
    assert result.hi == pytest.approx(interval[1], abs=0.05)


def test_selective_pvalue_at_an_endpoint():
    result = freq_selective_ci(LIK, TwoSided(3.111), 3.40, 0.05)
    assert selective_pvalue(LIK, TwoSided(3.111), 3.40, result.hi) == pytest.approx(0.05, abs=1e-4)
    assert selective_pvalue(LIK, TwoSided(3.111), 3.40, 2.0) > 0.05


@pytest.mark.slow
def test_selective_interval_coverage_by_simulation():
    rule = TwoSided(3.111)
    generator = np.random.default_rng(5)
    draws = []
    while len(draws) < 2000:
        y = 1.0 + generator.standard_normal(200_000)
        draws.extend(y[rule.contains(y)].tolist())
    covered = [freq_selective_ci(LIK, rule, y, 0.05, points=401).intervals for y in draws[:2000]]
    hits = np.mean([any(lo <= 1.0 <= hi for lo, hi in intervals) for intervals in covered])
    assert hits == pytest.approx(0.95, abs=0.015)


@pytest.mark.parametrize("hyper_var, kind, expected", [
    (1.0, "random", 0.4),
    (0.5, "mixed", 0.384),
    (1.0, "fixed", 0.164),
    (0.5, "fixed", 0.257),
])
def test_compound_selection(hyper_var, kind, expected):
    summary = compound_selection_posterior(hyper_var, (0.0, 2.0), 4.0, kind)
    assert summary.mean == pytest.approx(expected, abs=0.02)


def test_compound_selection_rejects_bad_inputs():
    with pytest.raises(DomainError):
        compound_selection_posterior(1.0, (0.0, 2.0), 0.0, "random")
    with pytest.raises(PreconditionError):
        compound_selection_posterior(1.0, (2.0, 0.0), 4.0, "random")


def test_credible_intervals_match_single_posteriors():
    prior = laplace_rate_mixture()
    ys = np.array([3.2, 3.40, 4.1, -5.59])
    lo, hi = credible_intervals(Random(), prior, LIK, EXAMPLE_RULE, ys, 0.95)
    for y, a, b in zip(ys, lo, hi):
        summary = summarize(sa_posterior(Random(), prior, LIK, EXAMPLE_RULE, y), 0.95)
        assert a == pytest.approx(summary.ci_lo, abs=0.01)
        assert b == pytest.approx(summary.ci_hi, abs=0.01)


def test_credible_intervals_reject_mixed_kinds():
    with pytest.raises(UnsupportedCombinationError):
        credible_intervals(Mixed(PointMass(1.0), ConditionalPrior("laplace_rate")), Normal(), LIK, EXAMPLE_RULE,
                           [3.4])


def test_credible_interval_coverage():
    ys = np.array([3.2, 3.40, 4.1, -5.59])
    lo, hi = credible_intervals(Fixed(), Flat(), LIK, EXAMPLE_RULE, ys, 0.9)
    theta = (lo + hi) / 2
    theta[-1] = hi[-1] + 1.0
    ledger = credible_interval_coverage(Fixed(), Flat(), LIK, EXAMPLE_RULE, ys, theta, 0.9)
    assert (ledger.R, ledger.V) == (4, 1)
    assert ledger.FCP == pytest.approx(0.25)


def test_flat_fixed_intervals_exclude_zero_beyond_the_crossing():
    lo, hi = credible_intervals(Fixed(), Flat(), LIK, EXAMPLE_RULE, [3.40, 5.59], 0.95)
    np.testing.assert_allclose(lo, [-0.04, 3.26], atol=0.02)
    np.testing.assert_allclose(hi, [4.64, 7.52], atol=0.02)
    # a null selected beyond the crossing is reported with the wrong sign
    assert summarize(sa_posterior(Fixed(), Flat(), LIK, EXAMPLE_RULE, 3.6), 0.95).ci_lo > 0
    assert stats.norm.sf(3.6) / stats.norm.sf(3.111) > 0.15
