import logging
from functools import cached_property

import attr
import numpy as np
from scipy import special, stats

from sabayes.model.distributions import (
    ConditionalPrior, MeanAndVariance, NormalLocation, Prior, discretize, log_interval_mass)
from sabayes.model.errors import ConfigurationError, DomainError, NumericError, UnsupportedCombinationError
from sabayes.model.loss import named_loss, posterior_loss_curve
from sabayes.model.numerics import Grid, find_root

log = logging.getLogger(__name__)

DIRECTIONS = ("abs_greater", "greater", "less")
STATISTICS = ("identity", "moderated_t")
CHI_SQUARE_NODES = 201


def _nonnegative(instance, attribute, value):
    if not value >= 0:
        raise DomainError("{} must be nonnegative, got {}".format(attribute.name, value))


def moderated_t_statistic(ybar, s2, n, df, nu0, s0sq):
    """
    ybar / (s_tilde / sqrt(n)) with s_tilde^2 = (nu0 * s0sq + df * s2) / (nu0 + df)
    """
    moderated = (nu0 * s0sq + df * np.asarray(s2, dtype=float)) / (nu0 + df)
    return np.asarray(ybar, dtype=float) / np.sqrt(moderated / n)


class SelectionRule:
    """
    Measurable region of observation space

    Membership is pure and deterministic. For the normal location likelihood every rule reduces to
    a finite union of open intervals of y (y_intervals), from which Pr(S | theta) is closed form.
    """

    def contains(self, y):
        raise NotImplementedError

    def y_intervals(self):
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError

    def _in_intervals(self, y):
        y = np.asarray(y, dtype=float)
        inside = np.zeros(y.shape, dtype=bool)
        for lo, hi in self.y_intervals():
            inside |= (y > lo) & (y < hi)
        return bool(inside) if inside.ndim == 0 else inside


@attr.s(frozen=True)
class TwoSided(SelectionRule):
    """
    |y| > a
    """
    a = attr.ib(converter=float, validator=_nonnegative)

    def contains(self, y):
        return self._in_intervals(y)

    def y_intervals(self):
        return [(-np.inf, -self.a), (self.a, np.inf)]

    def with_cutoff(self, a):
        return TwoSided(a)

    def statistic(self, y):
        return np.abs(y)

    def to_dict(self):
        return { "type": "twosided", "a": self.a }


@attr.s(frozen=True)
class OneSided(SelectionRule):
    """
    y > a
    """
    a = attr.ib(converter=float)

    def contains(self, y):
        return self._in_intervals(y)

    def y_intervals(self):
        return [(self.a, np.inf)]

    def with_cutoff(self, a):
        return OneSided(a)

    def statistic(self, y):
        return np.asarray(y, dtype=float)

    def to_dict(self):
        return { "type": "onesided", "a": self.a }


@attr.s(frozen=True)
class WholeSpace(SelectionRule):
    """
    Every observation is selected
    """

    def contains(self, y):
        value = np.ones(np.shape(y), dtype=bool)
        return bool(value) if value.ndim == 0 else value

    def y_intervals(self):
        return [(-np.inf, np.inf)]

    def to_dict(self):
        return { "type": "whole" }


def _sorted_intervals(value):
    intervals = sorted((float(lo), float(hi)) for lo, hi in value)
    for (lo, hi), (next_lo, _) in zip(intervals, intervals[1:] + [(np.inf, np.inf)]):
        if not lo < hi or hi > next_lo:
            raise DomainError("intervals must be nonempty and disjoint, got {}".format(intervals))
    return tuple(intervals)


@attr.s(frozen=True)
class IntervalRule(SelectionRule):
    """
    y in a finite union of open intervals
    """
    intervals = attr.ib(converter=_sorted_intervals)

    def contains(self, y):
        return self._in_intervals(y)

    def y_intervals(self):
        return list(self.intervals)

    def to_dict(self):
        return { "type": "intervals", "intervals": [list(interval) for interval in self.intervals] }


@attr.s(frozen=True)
class StatThreshold(SelectionRule):
    """
    Threshold s on a named statistic of the observation

    stat "identity" is the observation itself; "moderated_t" is the moderated t statistic of a gene
    record and needs the variance prior fit (any object with nu0 and s0sq).
    """
    stat = attr.ib()
    s = attr.ib(converter=float)
    direction = attr.ib(default="abs_greater")
    fit = attr.ib(default=None, eq=False)

    @stat.validator
    def _check_stat(self, attribute, value):
        if value not in STATISTICS:
            raise ConfigurationError("unknown statistic {}, expected one of {}".format(value, STATISTICS))

    @direction.validator
    def _check_direction(self, attribute, value):
        if value not in DIRECTIONS:
            raise ConfigurationError("unknown direction {}, expected one of {}".format(value, DIRECTIONS))
        if value == "abs_greater" and self.s < 0:
            raise DomainError("an abs_greater cutoff must be nonnegative, got {}".format(self.s))

    def statistic(self, observation):
        if self.stat == "identity":
            return np.asarray(observation, dtype=float)
        if self.fit is None:
            raise ConfigurationError("the moderated_t statistic needs a variance prior fit")
        return moderated_t_statistic(observation.ybar, observation.s2, observation.n, observation.df,
                                     self.fit.nu0, self.fit.s0sq)

    def passes(self, value):
        if self.direction == "abs_greater":
            return np.abs(value) > self.s
        if self.direction == "greater":
            return value > self.s
        return value < self.s

    def contains(self, observation):
        inside = self.passes(self.statistic(observation))
        return bool(inside) if np.ndim(inside) == 0 else inside

    def y_intervals(self):
        if self.stat != "identity":
            raise UnsupportedCombinationError("statistic {} is not defined on a scalar observation".format(self.stat))
        if self.direction == "abs_greater":
            return [(-np.inf, -self.s), (self.s, np.inf)]
        if self.direction == "greater":
            return [(self.s, np.inf)]
        return [(-np.inf, self.s)]

    def with_cutoff(self, s):
        return attr.evolve(self, s=s)

    def to_dict(self):
        return { "type": "stat_threshold", "stat": self.stat, "s": self.s, "direction": self.direction }


@attr.s(frozen=True)
class LossThreshold(SelectionRule):
    """
    Select y when the random-effect posterior expected loss rho(y) is at most s

    The region depends on the prior and likelihood the loss is evaluated under; bind() attaches them.
    For the normal location likelihood the region is located on a y grid and its boundaries refined
    by bisection.
    """
    loss = attr.ib(converter=named_loss)
    s = attr.ib(converter=float)
    prior = attr.ib(default=None)
    likelihood = attr.ib(default=None)

    def bind(self, prior, likelihood):
        return attr.evolve(self, prior=prior, likelihood=likelihood)

    def with_cutoff(self, s):
        return attr.evolve(self, s=s)

    def rho(self, y):
        self._require_binding()
        return posterior_loss_curve(self.prior, self.likelihood, self.loss, y)

    def contains(self, y):
        return self._in_intervals(y)

    def y_intervals(self):
        return list(self._region)

    def _require_binding(self):
        if self.prior is None or self.likelihood is None:
            raise ConfigurationError("a loss threshold rule must be bound to a prior and likelihood")
        if not isinstance(self.likelihood, NormalLocation):
            raise UnsupportedCombinationError("the loss region is located on the scalar observation line only")

    @cached_property
    def _region(self):
        self._require_binding()
        sigma = self.likelihood.sigma
        lo, hi = self.prior.support() or (0.0, 0.0)
        half = max(abs(lo), abs(hi)) / 2 + 12 * sigma
        ys = Grid.aligned(-half, half, sigma / 20).nodes
        coarse = posterior_loss_curve(self.prior, self.likelihood, self.loss, ys, spacing=self.prior.scale / 20)
        inside = coarse <= self.s

        def gap(y):
            return float(self.rho(y)[0]) - self.s

        edges = []
        for i in np.flatnonzero(inside[1:] != inside[:-1]):
            try:
                edges.append(find_root(gap, ys[i], ys[i + 1], tol=1e-7))
            except NumericError:
                edges.append((ys[i] + ys[i + 1]) / 2)
        bounds = ([-np.inf] if inside[0] else []) + edges + ([np.inf] if inside[-1] else [])
        region = tuple(zip(bounds[0::2], bounds[1::2]))
        log.debug("loss threshold %s <= %.6g selects %s", self.loss.name, self.s, region)
        return region

    def to_dict(self):
        return { "type": "loss_threshold", "loss": self.loss.to_dict(), "s": self.s }


def _normal_location_probability(rule, lik, theta):
    theta = np.asarray(theta, dtype=float)
    terms = [log_interval_mass(lo, hi, theta, lik.sigma) for lo, hi in rule.y_intervals() if lo < hi]
    if len(terms) == 0:
        return np.full(theta.shape, -np.inf)
    return special.logsumexp(np.stack(terms), axis=0)


@attr.s(frozen=True, eq=False)
class _ChiSquareQuadrature:
    """
    Quadrature for X ~ chi^2_df over log X; weights are normalized to total mass 1
    """
    df = attr.ib()
    size = attr.ib(default=CHI_SQUARE_NODES)
    nodes = attr.ib(init=False)
    weights = attr.ib(init=False)

    def __attrs_post_init__(self):
        lo = np.log(stats.chi2.ppf(1e-12, self.df))
        hi = np.log(stats.chi2.isf(1e-14, self.df))
        grid = Grid(lo, hi, self.size)
        x = np.exp(grid.nodes)
        weights = grid.weights * stats.chi2.pdf(x, self.df) * x
        object.__setattr__(self, "nodes", x)
        object.__setattr__(self, "weights", weights / weights.sum())


def moderated_t_selection_probability(rule, lik, mu, sigma2, chi_nodes=CHI_SQUARE_NODES):
    """
    Pr(rule selects | mu, sigma^2) for the moderated t statistic

    Quadrature over the sample variance s^2 = sigma^2 X / df, X ~ chi^2_df, with the normal tail of
    the sample mean in closed form.
    """
    mu = np.asarray(mu, dtype=float)[..., None]
    sigma2 = np.asarray(sigma2, dtype=float)[..., None]
    if np.any(sigma2 <= 0):
        raise DomainError("sigma^2 must be positive")
    chi = _ChiSquareQuadrature(lik.df, chi_nodes)
    s2 = sigma2 * chi.nodes / lik.df
    cut = rule.s * np.sqrt((rule.fit.nu0 * rule.fit.s0sq + lik.df * s2) / (rule.fit.nu0 + lik.df) / lik.n)
    sd = np.sqrt(sigma2 / lik.n)
    upper = special.ndtr((mu - cut) / sd)
    lower = special.ndtr((-cut - mu) / sd)
    if rule.direction == "abs_greater":
        tail = upper + lower
    elif rule.direction == "greater":
        tail = upper
    else:
        tail = special.ndtr((cut - mu) / sd)
    return np.clip(np.dot(tail, chi.weights), 0.0, 1.0)


def log_selection_probability(rule, lik, theta):
    """
    log Pr(S | theta) for the normal location likelihood, accurate where Pr(S | theta) underflows
    """
    if not isinstance(lik, NormalLocation):
        raise UnsupportedCombinationError("log selection probabilities are formed for the normal location likelihood")
    value = np.minimum(_normal_location_probability(rule, lik, theta), 0.0)
    return float(value) if np.ndim(value) == 0 else value


def selection_probability(rule, lik, theta):
    """
    Parameters
    ---
    rule : SelectionRule
    lik : NormalLocation or MeanAndVariance
    theta : parameter point
        a real number or array under NormalLocation, the pair (mu, sigma^2) under MeanAndVariance

    Returns
    ---
    probability or array : Pr(y in S | theta)
    """
    if isinstance(lik, NormalLocation):
        value = np.exp(log_selection_probability(rule, lik, theta))
    elif isinstance(lik, MeanAndVariance):
        if not (isinstance(rule, StatThreshold) and rule.stat == "moderated_t"):
            raise UnsupportedCombinationError(
                "{} has no selection probability under the mean-and-variance likelihood".format(type(rule).__name__))
        if rule.fit is None:
            raise ConfigurationError("the moderated_t statistic needs a variance prior fit")
        mu, sigma2 = theta
        value = moderated_t_selection_probability(rule, lik, mu, sigma2)
    else:
        raise UnsupportedCombinationError("unknown likelihood {}".format(type(lik).__name__))
    return float(value) if np.ndim(value) == 0 else value


def selection_probability_given_hyper(rule, lik, conditional, lam, spacing=None):
    """
    Parameters
    ---
    rule : SelectionRule
    lik : NormalLocation
    conditional : ConditionalPrior or Prior
        the lambda-indexed prior of theta (a Prior is used as is)
    lam : hyperparameter value
    spacing : positive real number
        quadrature spacing over theta

    Returns
    ---
    probability : integral of Pr(S | theta) pi_1(theta | lambda) over theta
    """
    prior = conditional.given(lam) if isinstance(conditional, ConditionalPrior) else conditional
    if not isinstance(prior, Prior) or not prior.proper:
        raise ConfigurationError("the conditional prior must be proper")
    points = discretize(prior, spacing)
    value = points.expect(selection_probability(rule, lik, points.points))
    if not np.isfinite(value):
        raise NumericError("selection probability given lambda = {} is not finite".format(lam), location=lam)
    return float(min(max(value, 0.0), 1.0))
