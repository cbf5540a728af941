import logging
from concurrent.futures import ProcessPoolExecutor

import attr
import numpy as np
from scipy import optimize, special
from sortedcontainers import SortedDict

from sabayes.model.distributions import (
    Laplace, Mixture, Normal, NormalLocation, discretize, log_interval_mass)
from sabayes.model.errors import (
    CalibrationError, ConfigurationError, DegenerateRuleError, FitError, NumericError, PreconditionError,
    UnsupportedCombinationError)
from sabayes.model.loss import Membership, named_loss, posterior_loss_curve
from sabayes.model.numerics import Grid, find_root, log_normal_cdf
from sabayes.model.selection import (
    IntervalRule, LossThreshold, OneSided, StatThreshold, TwoSided, WholeSpace, selection_probability)

log = logging.getLogger(__name__)

CALIBRATION_POINTS = 50
CALIBRATION_TOLERANCE = 1e-4
WHOLE_SPACE_SLACK = 1e-3
MONOTONE_SLACK = 1e-6
BLOCK_CELLS = 1 << 22


@attr.s(frozen=True)
class RiskReport:
    """
    saBayes risk of a selection rule with its selection probability under the marginal of y
    """
    rule = attr.ib()
    risk = attr.ib()
    selection_prob = attr.ib()
    expected_discoveries = attr.ib()
    loss = attr.ib()
    expected_false_discoveries = attr.ib(default=0.0)
    form = attr.ib(default="ratio")

    def to_dict(self):
        return { "rule": self.rule.to_dict(), "risk": self.risk, "selection_prob": self.selection_prob,
                 "expected_discoveries": self.expected_discoveries, "loss": self.loss.to_dict(),
                 "expected_false_discoveries": self.expected_false_discoveries, "form": self.form }


def _require_proper(prior):
    if not prior.proper:
        raise ConfigurationError("the saBayes risk needs a proper prior; fit one to the data with ebayes_fit")


def _require_normal_location(lik):
    if not isinstance(lik, NormalLocation):
        raise UnsupportedCombinationError("this operation is formed for the normal location likelihood; "
                                          "use gene_risk for gene records")


def _clip(intervals, lo, hi):
    return [(max(a, lo), min(b, hi)) for a, b in intervals if max(a, lo) < min(b, hi)]


def _interval_probability(intervals, theta, sigma):
    """
    Pr(Y in union of intervals | theta) for Y ~ N(theta, sigma^2), vectorized over theta
    """
    theta = np.asarray(theta, dtype=float)
    if len(intervals) == 0:
        return np.zeros(theta.shape)
    terms = np.stack([log_interval_mass(lo, hi, theta, sigma) for lo, hi in intervals])
    return np.exp(special.logsumexp(terms, axis=0))


def marginal_selection_probability(prior, lik, rule, spacing=None):
    """
    Pr(S) = integral of Pr(S | theta) pi(theta)
    """
    _require_proper(prior)
    points = discretize(prior, spacing)
    return float(points.expect(selection_probability(rule, lik, points.points)))


def truncated_marginal(prior, lik, rule, y, spacing=None):
    """
    Parameters
    ---
    prior : Prior, proper
    lik : NormalLocation
    rule : SelectionRule
    y : real number or array of observations in the selection region

    Returns
    ---
    nonnegative real number or array : m_S(y) = m(y) / Pr(S), the marginal density of y restricted to S
    """
    _require_proper(prior)
    _require_normal_location(lik)
    ys = np.asarray(y, dtype=float)
    if not np.all(rule.contains(ys)):
        raise PreconditionError("observation {} is not in the selection region".format(y))
    points = discretize(prior, spacing)
    total = points.expect(selection_probability(rule, lik, points.points))
    if not total > 0:
        raise DegenerateRuleError("the rule {} selects with probability 0".format(rule.to_dict()))
    flat = np.atleast_1d(ys)
    marginal = np.array([points.expect(lik.density(value, points.points)) for value in flat]) / total
    return float(marginal[0]) if ys.ndim == 0 else marginal.reshape(ys.shape)


def _risk_terms(points, lik, rule, loss):
    """
    (numerator, Pr(S)) of the ratio form, with the inner y integrals in closed form
    """
    intervals = rule.y_intervals()
    numerator = 0.0
    for lo, hi, representative in loss.cells():
        cell = _clip(intervals, lo, hi)
        if len(cell) == 0:
            continue
        values = loss.values(points.points, representative, points.is_atom)
        numerator += points.expect(values * _interval_probability(cell, points.points, lik.sigma))
    denominator = points.expect(_interval_probability(intervals, points.points, lik.sigma))
    return float(numerator), float(denominator)


def _expectation_terms(points, lik, rule, loss, y_spacing):
    """
    (integral over S of rho(y) m(y), Pr(S)); rho is formed per y and the y integral is Simpson quadrature
    """
    sigma = lik.sigma
    reach = (points.points.min() - 12 * sigma, points.points.max() + 12 * sigma)
    log_masses = points.log_masses
    numerator = 0.0
    for lo, hi, representative in loss.cells():
        values = loss.values(points.points, representative, points.is_atom)
        for a, b in _clip(rule.y_intervals(), max(lo, reach[0]), min(hi, reach[1])):
            grid = Grid(a, b, 2 * max(1, int(np.ceil((b - a) / y_spacing / 2))) + 1, "simpson")
            block = max(1, BLOCK_CELLS // len(points.points))
            for start in range(0, grid.n, block):
                ys = grid.nodes[start:start + block, None]
                log_weight = lik.log_density(ys, points.points[None, :]) + log_masses[None, :]
                shift = log_weight.max(axis=1, keepdims=True)
                weight = np.exp(log_weight - shift)
                marginal = weight.sum(axis=1)
                rho = (weight * values[None, :]).sum(axis=1) / marginal
                numerator += float(np.dot(grid.weights[start:start + block], rho * marginal * np.exp(shift[:, 0])))
    denominator = points.expect(_interval_probability(rule.y_intervals(), points.points, sigma))
    return numerator, float(denominator)


def sabayes_risk(prior, lik, rule, loss, m=1, form="ratio", spacing=None, y_spacing=None):
    """
    saBayes risk of a selection rule: the posterior expected loss averaged over the truncated marginal of y

    Parameters
    ---
    prior : Prior
        proper prior (an empirical-Bayes fit when effects are not exchangeable)
    lik : NormalLocation
    rule : SelectionRule
    loss : Loss or loss name
    m : number of hypotheses, scales the expected discovery counts
    form : "ratio" or "expectation"
        "ratio" integrates the loss against pi(theta) Pr(y in S, cell | theta) in closed form;
        "expectation" averages rho(y) over a Simpson grid of y in S
    spacing : prior quadrature spacing, defaults to prior.scale / 100
    y_spacing : observation grid spacing of the expectation form, defaults to sigma / 100

    Returns
    ---
    RiskReport : risk, selection probability and expected (false) discoveries
    """
    _require_proper(prior)
    _require_normal_location(lik)
    loss = named_loss(loss)
    points = discretize(prior, spacing)
    if form == "ratio":
        numerator, denominator = _risk_terms(points, lik, rule, loss)
    elif form == "expectation":
        numerator, denominator = _expectation_terms(points, lik, rule, loss, y_spacing or lik.sigma / 100)
    else:
        raise ConfigurationError("unknown risk form {}, expected ratio or expectation".format(form))
    if not (np.isfinite(numerator) and np.isfinite(denominator)):
        raise NumericError("risk integrals are not finite")
    risk = 0.0 if denominator <= 0 else min(max(numerator / denominator, 0.0), 1.0)
    log.debug("risk of %s under %s loss: %.6g (Pr(S) = %.6g)", rule.to_dict(), loss.name, risk, denominator)
    return RiskReport(rule=rule, risk=risk, selection_prob=denominator, expected_discoveries=m * denominator,
                      loss=loss, expected_false_discoveries=m * max(numerator, 0.0), form=form)


def directional_risk_curve(prior, lik, thresholds, loss="directional", spacing=None):
    """
    Risk of the two-sided rules |y| > a for each threshold a

    Returns
    ---
    (array, array) : risks and selection probabilities per threshold
    """
    _require_proper(prior)
    _require_normal_location(lik)
    loss = named_loss(loss)
    points = discretize(prior, spacing)
    risks, probabilities = [], []
    for a in np.asarray(thresholds, dtype=float):
        numerator, denominator = _risk_terms(points, lik, TwoSided(a), loss)
        risks.append(0.0 if denominator <= 0 else numerator / denominator)
        probabilities.append(denominator)
    return np.array(risks), np.array(probabilities)


def constant_discovery_pfdr(prior, lik, rule, discovery_set, spacing=None):
    """
    pFDR of a rule whose discovery is the same set A for every selected y

    Parameters
    ---
    discovery_set : list of (lo, hi) open intervals forming A

    Returns
    ---
    probability : integral of I(theta not in A) pi(theta) Pr(S | theta), divided by Pr(S)
    """
    _require_proper(prior)
    points = discretize(prior, spacing)
    selected = selection_probability(rule, lik, points.points)
    outside = Membership(discovery_set).values(points.points, 0.0, points.is_atom)
    denominator = points.expect(selected)
    if not denominator > 0:
        raise DegenerateRuleError("the rule {} selects with probability 0".format(rule.to_dict()))
    return float(points.expect(outside * selected) / denominator)


def _scan(risk_of, parameters, workers):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            return np.array(list(executor.map(risk_of, parameters)))
    return np.array([risk_of(p) for p in parameters])


def calibrate_parameter(risk_of, lo, hi, q, points=CALIBRATION_POINTS, tol=CALIBRATION_TOLERANCE, workers=1):
    """
    Parameter p in [lo, hi] with risk_of(p) = q for a monotone risk curve

    The curve is probed on points equally spaced values (concurrently when workers > 1), checked for
    monotonicity, and the crossing is bisected to width tol.

    Returns
    ---
    (real, array, array) : the parameter, and the probed parameters and risks
    """
    parameters = np.linspace(lo, hi, points)
    risks = _scan(risk_of, parameters, workers)
    steps = np.diff(risks)
    if not (np.all(steps <= MONOTONE_SLACK) or np.all(steps >= -MONOTONE_SLACK)):
        raise CalibrationError("the risk is not monotone over [{:.6g}, {:.6g}]".format(lo, hi),
                               risk_range=(float(risks.min()), float(risks.max())))
    gaps = risks - q
    crossing = np.flatnonzero(np.sign(gaps[:-1]) != np.sign(gaps[1:]))
    exact = np.flatnonzero(gaps == 0)
    if len(exact) > 0:
        return float(parameters[exact[0]]), parameters, risks
    if len(crossing) == 0:
        raise CalibrationError("target risk {} is outside the achievable range [{:.6g}, {:.6g}]".format(
            q, risks.min(), risks.max()), risk_range=(float(risks.min()), float(risks.max())))
    i = crossing[0]
    root = find_root(lambda p: risk_of(p) - q, parameters[i], parameters[i + 1], tol=tol)
    log.info("calibrated parameter %.6g for target risk %.4g", root, q)
    return root, parameters, risks


@attr.s(frozen=True)
class _ThresholdRisk:
    """
    Picklable risk curve of a one-parameter rule family
    """
    prior = attr.ib()
    lik = attr.ib()
    loss = attr.ib()
    template = attr.ib()
    spacing = attr.ib(default=None)

    def __call__(self, parameter):
        rule = self.template.with_cutoff(parameter)
        return sabayes_risk(self.prior, self.lik, rule, self.loss, spacing=self.spacing).risk


@attr.s(frozen=True, eq=False)
class _LossRegions:
    """
    Regions {rho(y) <= s} for many s, read off one rho curve by linear interpolation
    """
    ys = attr.ib()
    rho = attr.ib()

    def rule(self, s):
        inside = self.rho <= s
        edges = []
        for i in np.flatnonzero(inside[1:] != inside[:-1]):
            r0, r1 = self.rho[i], self.rho[i + 1]
            edges.append(self.ys[i] + (s - r0) * (self.ys[i + 1] - self.ys[i]) / (r1 - r0))
        bounds = ([-np.inf] if inside[0] else []) + edges + ([np.inf] if inside[-1] else [])
        return IntervalRule(list(zip(bounds[0::2], bounds[1::2])))


@attr.s(frozen=True)
class _LossThresholdRisk:
    prior = attr.ib()
    lik = attr.ib()
    loss = attr.ib()
    regions = attr.ib(eq=False)
    spacing = attr.ib(default=None)

    def __call__(self, s):
        rule = self.regions.rule(s)
        if len(rule.intervals) == 0:
            return 0.0
        return sabayes_risk(self.prior, self.lik, rule, self.loss, spacing=self.spacing).risk


def loss_regions(prior, lik, loss, spacing=None):
    """
    rho(y) on a fine y grid, from which the region of every loss threshold is read
    """
    lo, hi = prior.support() or (0.0, 0.0)
    half = max(abs(lo), abs(hi)) / 2 + 12 * lik.sigma
    ys = Grid.aligned(-half, half, lik.sigma / 100).nodes
    rho = posterior_loss_curve(prior, lik, loss, ys, spacing=spacing or prior.scale / 20)
    return _LossRegions(ys, rho)


def calibrate_rule(family, prior, lik, loss, q, bracket=None, points=CALIBRATION_POINTS,
                   tol=CALIBRATION_TOLERANCE, workers=1, spacing=None):
    """
    Selection rule of a one-parameter family whose saBayes risk equals q

    Parameters
    ---
    family : "twosided", "onesided", "loss_threshold", or a rule used as template of its family
    prior : Prior, proper
    lik : NormalLocation
    loss : Loss or loss name
    q : target risk
    bracket : (lo, hi) search range of the family parameter; defaults to [0, 10] for thresholds
        and (0, max rho] for loss thresholds
    workers : processes probing the bracket

    Returns
    ---
    SelectionRule : the calibrated rule; the whole space when it already meets the target
    """
    _require_proper(prior)
    _require_normal_location(lik)
    loss = named_loss(loss)
    template = {"twosided": TwoSided(0.0), "onesided": OneSided(0.0)}.get(family, family)

    if family == "loss_threshold" or isinstance(family, LossThreshold):
        regions = loss_regions(prior, lik, loss)
        risk_of = _LossThresholdRisk(prior, lik, loss, regions, spacing)
        lo, hi = bracket or (float(regions.rho.max()) * 1e-3, float(regions.rho.max()))
        if abs(risk_of(hi) - q) <= WHOLE_SPACE_SLACK:
            return WholeSpace()
        s, _, _ = calibrate_parameter(risk_of, lo, hi, q, points, tol * 1e-2, workers)
        return LossThreshold(loss, s).bind(prior, lik)

    if not isinstance(template, (TwoSided, OneSided, StatThreshold)):
        raise ConfigurationError("unknown rule family {}".format(family))
    risk_of = _ThresholdRisk(prior, lik, loss, template, spacing)
    lo, hi = bracket or (0.0, 10.0)
    if isinstance(template, TwoSided) and lo == 0 and abs(risk_of(0.0) - q) <= WHOLE_SPACE_SLACK:
        return WholeSpace()
    a, _, _ = calibrate_parameter(risk_of, lo, hi, q, points, tol, workers)
    return template.with_cutoff(a)


@attr.s(frozen=True, eq=False)
class TwoGroupReport:
    """
    pFDR of a rejection region in the two-group model with its q-value curve and local fdr
    """
    pfdr = attr.ib()
    qvalue_curve = attr.ib()
    local_fdr = attr.ib()
    pi0 = attr.ib()
    f0 = attr.ib()
    f1 = attr.ib()
    gamma = attr.ib()
    null_prob = attr.ib()
    alt_prob = attr.ib()

    def qvalue(self, y):
        """
        Smallest pFDR over the nested regions of the curve that contain y
        """
        if not isinstance(self.gamma, (TwoSided, OneSided)):
            raise UnsupportedCombinationError("q-values are defined for the one-parameter TwoSided and OneSided "
                                              "families, got {}".format(type(self.gamma).__name__))
        statistic = float(self.gamma.statistic(y))
        cutoffs = list(self.qvalue_curve.irange(maximum=statistic, inclusive=(True, False)))
        if len(cutoffs) == 0:
            return 1.0
        return min(self.qvalue_curve[c] for c in cutoffs)

    def average_local_fdr(self, y_spacing=1e-3, reach=12.0):
        """
        local fdr averaged over the region against the two-group marginal of y (Simpson quadrature)
        """
        numerator = denominator = 0.0
        windows = [f.support() for f in (self.f0, self.f1)]
        lo = min(w[0] for w in windows) - reach
        hi = max(w[1] for w in windows) + reach
        for a, b in _clip(self.gamma.y_intervals(), lo, hi):
            grid = Grid(a, b, 2 * max(1, int(np.ceil((b - a) / y_spacing / 2))) + 1, "simpson")
            marginal = self.pi0 * self.f0.density(grid.nodes) + (1 - self.pi0) * self.f1.density(grid.nodes)
            numerator += float(np.dot(grid.weights, self.local_fdr(grid.nodes) * marginal))
            denominator += float(np.dot(grid.weights, marginal))
        return numerator / denominator

    def to_dict(self):
        return { "pfdr": self.pfdr, "pi0": self.pi0, "null_prob": self.null_prob, "alt_prob": self.alt_prob,
                 "gamma": self.gamma.to_dict(),
                 "qvalue_curve": [[cutoff, value] for cutoff, value in self.qvalue_curve.items()] }


def _region_mass(density, intervals):
    return sum(density.interval_mass(lo, hi) for lo, hi in intervals)


def _two_group_pfdr(pi0, null_prob, alt_prob):
    if pi0 == 1:
        return 1.0
    if pi0 == 0:
        return 0.0
    denominator = pi0 * null_prob + (1 - pi0) * alt_prob
    if not denominator > 0:
        raise DegenerateRuleError("the rejection region has probability 0 under both groups")
    return pi0 * null_prob / denominator


def two_group(pi0, f0, f1, gamma, cutoffs=None):
    """
    Two-group model: y ~ f0 under the null (probability pi0) and y ~ f1 otherwise

    Parameters
    ---
    pi0 : probability
    f0, f1 : proper Prior objects used as densities of y
    gamma : SelectionRule
        rejection region; TwoSided and OneSided regions also yield the q-value curve over their
        nested family
    cutoffs : cutoffs of the q-value curve, defaults to 401 values over [0, 10] (two-sided) or [-10, 10]

    Returns
    ---
    TwoGroupReport
    """
    if not 0 <= pi0 <= 1:
        raise ConfigurationError("pi0 must lie in [0, 1], got {}".format(pi0))
    if not (f0.proper and f1.proper):
        raise ConfigurationError("two-group densities must be proper")
    intervals = gamma.y_intervals()
    null_prob, alt_prob = _region_mass(f0, intervals), _region_mass(f1, intervals)
    pfdr = _two_group_pfdr(pi0, null_prob, alt_prob)

    def local_fdr(y):
        null = pi0 * f0.density(y)
        total = null + (1 - pi0) * f1.density(y)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(total > 0, null / total, pi0)

    curve = SortedDict()
    if isinstance(gamma, (TwoSided, OneSided)):
        if cutoffs is None:
            cutoffs = np.linspace(0, 10, 401) if isinstance(gamma, TwoSided) else np.linspace(-10, 10, 401)
        for c in cutoffs:
            region = gamma.with_cutoff(c).y_intervals()
            try:
                curve[float(c)] = _two_group_pfdr(pi0, _region_mass(f0, region), _region_mass(f1, region))
            except DegenerateRuleError:
                continue
    return TwoGroupReport(pfdr, curve, local_fdr, pi0, f0, f1, gamma, null_prob, alt_prob)


def fixed_two_group_posterior(pi0, f0, f1, gamma, y):
    """
    Selection-adjusted P(H = 0 | y) when the hypothesis indicator is a fixed effect

    Each group's density is truncated to the region: f_j(y) / Pr(y in gamma | H = j).
    """
    if not gamma.contains(y):
        raise PreconditionError("observation {} is not in the rejection region".format(y))
    intervals = gamma.y_intervals()
    null_prob, alt_prob = _region_mass(f0, intervals), _region_mass(f1, intervals)
    null = pi0 * f0.density(y) / null_prob if null_prob > 0 else 0.0
    alt = (1 - pi0) * f1.density(y) / alt_prob if alt_prob > 0 else 0.0
    if not null + alt > 0:
        raise DegenerateRuleError("both truncated densities vanish at {}".format(y))
    return float(null / (null + alt))


@attr.s(frozen=True)
class EffectPriorFit:
    family = attr.ib()
    prior = attr.ib()
    log_likelihood = attr.ib()
    parameters = attr.ib(factory=dict)

    def to_dict(self):
        return { "family": self.family, "prior": self.prior.to_dict(), "log_likelihood": self.log_likelihood,
                 "parameters": self.parameters }


def laplace_log_marginal(y, rate, sigma=1.0):
    """
    log of the density of y = theta + sigma * epsilon with theta ~ Laplace(rate)
    """
    y = np.asarray(y, dtype=float)
    left = -rate * y + log_normal_cdf(y / sigma - rate * sigma)
    right = rate * y + log_normal_cdf(-y / sigma - rate * sigma)
    return np.log(rate / 2) + (rate * sigma) ** 2 / 2 + np.logaddexp(left, right)


def ebayes_fit(y, family="laplace", sigma=1.0, rates=(10.0, 1.0)):
    """
    Parametric empirical-Bayes prior: maximizes the marginal likelihood of the observations

    Parameters
    ---
    y : array-like of observations, y_i = theta_i + sigma * epsilon_i
    family : "laplace" (fits the rate), "normal" (fits the variance of a centred normal) or
        "laplace_mixture" (fits the weight of the first of two Laplace components with the given rates)
    sigma : known noise scale
    rates : component rates of the "laplace_mixture" family

    Returns
    ---
    EffectPriorFit
    """
    y = np.asarray(y, dtype=float)
    if len(y) < 2 or not np.all(np.isfinite(y)):
        raise FitError("an empirical-Bayes fit needs at least two finite observations")

    if family == "normal":
        var = float(np.mean(y ** 2) - sigma ** 2)
        if not var > 0:
            raise FitError("observations are no more dispersed than the noise; supply the prior explicitly")
        prior = Normal(0.0, var)
        loglik = float(np.sum(-0.5 * y ** 2 / (var + sigma ** 2) - 0.5 * np.log(2 * np.pi * (var + sigma ** 2))))
        return EffectPriorFit(family, prior, loglik, { "var": var })

    if family == "laplace":
        def objective(log_rate):
            return -float(np.sum(laplace_log_marginal(y, np.exp(log_rate), sigma)))

        result = optimize.minimize_scalar(objective, bounds=(np.log(1e-3), np.log(1e3)), method="bounded")
        rate = float(np.exp(result.x))
        if not result.success or abs(result.x - np.log(1e3)) < 1e-3 or abs(result.x - np.log(1e-3)) < 1e-3:
            raise FitError("Laplace rate fit did not converge inside [1e-3, 1e3] (got {:.6g})".format(rate))
        return EffectPriorFit(family, Laplace(rate), -float(result.fun), { "rate": rate })

    if family == "laplace_mixture":
        first = laplace_log_marginal(y, rates[0], sigma)
        second = laplace_log_marginal(y, rates[1], sigma)

        def objective(weight):
            return -float(np.sum(np.logaddexp(np.log(weight) + first, np.log1p(-weight) + second)))

        result = optimize.minimize_scalar(objective, bounds=(1e-6, 1 - 1e-6), method="bounded")
        if not result.success:
            raise FitError("mixture weight fit did not converge")
        weight = float(result.x)
        prior = Mixture([(weight, Laplace(rates[0])), (1 - weight, Laplace(rates[1]))])
        return EffectPriorFit(family, prior, -float(result.fun), { "weight": weight, "rates": list(rates) })

    raise ConfigurationError("unknown prior family {}, expected laplace, normal or laplace_mixture".format(family))
