import logging

import attr
import numpy as np
from scipy import special

from sabayes.model.distributions import Fixed, Mixed, NormalLocation, Random, discretize, log_interval_mass
from sabayes.model.errors import (
    ConfigurationError, DomainError, ImproperPosteriorError, NumericError, PreconditionError,
    UnsupportedCombinationError)
from sabayes.model.loss import named_loss
from sabayes.model.multiplicity import interval_coverage
from sabayes.model.numerics import Grid, cumulative, find_root, normal_quantile
from sabayes.model.selection import (
    WholeSpace, log_selection_probability, selection_probability_given_hyper)

log = logging.getLogger(__name__)

NODES_PER_SCALE = 100
INITIAL_HALF_WIDTH = 10.0
MAX_HALF_WIDTH = 1000.0
TAIL_DROP = 40.0
WIDENING_TOLERANCE = 1e-3
CUSP_RATIO = (3.0, 5.0)
BLOCK_CELLS = 1 << 22


def effect_kind(kind):
    """
    Accepts an EffectKind instance or the names "random" and "fixed"
    """
    if isinstance(kind, (Random, Fixed, Mixed)):
        return kind
    if kind == "random":
        return Random()
    if kind == "fixed":
        return Fixed()
    raise ConfigurationError("unknown effect kind {}, expected random, fixed or a mixed document".format(kind))


def _check_level(level):
    if not 0 < level < 1:
        raise DomainError("level must lie in (0, 1), got {}".format(level))


@attr.s(frozen=True)
class Summary:
    mean = attr.ib()
    mode = attr.ib()
    ci_lo = attr.ib()
    ci_hi = attr.ib()
    level = attr.ib()
    tail_prob_pos = attr.ib()
    tail_prob_neg = attr.ib()
    atoms = attr.ib(factory=list)
    spikes = attr.ib(factory=list)

    def to_dict(self):
        return attr.asdict(self)


@attr.s(frozen=True, eq=False)
class PosteriorGrid:
    """
    Normalized posterior: a density on grid nodes plus point masses

    The continuous part integrates (with the grid weights) to 1 minus the total atom mass.
    normalization keeps the integral of the unnormalized kernel relative to exp(log_scale).
    """
    grid = attr.ib()
    density = attr.ib()
    atoms = attr.ib(factory=list)
    normalization = attr.ib(default=1.0)
    log_scale = attr.ib(default=0.0)
    diagnostics = attr.ib(factory=dict)

    def __attrs_post_init__(self):
        density = np.asarray(self.density, dtype=float)
        if density.shape != self.grid.nodes.shape or np.any(~np.isfinite(density)) or np.any(density < 0):
            raise NumericError("posterior density must be finite and nonnegative on every node")
        density.setflags(write=False)
        object.__setattr__(self, "density", density)

    @classmethod
    def from_kernel(cls, grid, log_kernel, atoms=(), diagnostics=None):
        """
        Parameters
        ---
        grid : Grid
        log_kernel : array
            log of the unnormalized continuous density on the grid nodes (-inf allowed)
        atoms : list of (location, log unnormalized mass)

        Returns
        ---
        PosteriorGrid : the normalized posterior
        """
        log_kernel = np.asarray(log_kernel, dtype=float)
        if np.any(np.isnan(log_kernel) | (log_kernel == np.inf)):
            bad = np.isnan(log_kernel) | (log_kernel == np.inf)
            raise NumericError("posterior kernel is not finite", location=grid.nodes[np.argmax(bad)])
        top = max([np.max(log_kernel)] + [m for _, m in atoms])
        if not np.isfinite(top):
            raise NumericError("posterior kernel vanishes on the whole window")
        kernel = np.exp(log_kernel - top)
        masses = [(location, float(np.exp(m - top))) for location, m in atoms]
        total = float(np.dot(grid.weights, kernel)) + sum(m for _, m in masses)
        return cls(grid, kernel / total, [(float(loc), m / total) for loc, m in masses if m > 0],
                   total, float(top), diagnostics or {})

    @property
    def nodes(self):
        return self.grid.nodes

    @property
    def atom_mass(self):
        return sum(mass for _, mass in self.atoms)

    def total_mass(self):
        return float(np.dot(self.grid.weights, self.density)) + self.atom_mass

    def expect(self, g):
        """
        Posterior expectation of g(theta); g is vectorized over theta
        """
        value = float(np.dot(self.grid.weights, self.density * g(self.nodes)))
        return value + sum(mass * float(g(np.asarray(loc))) for loc, mass in self.atoms)

    def mean(self):
        return self.expect(lambda theta: theta)

    def density_at(self, theta):
        """
        Continuous posterior density at theta, interpolated linearly in the log scale
        """
        with np.errstate(divide="ignore"):
            log_density = np.log(self.density)
        return np.exp(np.interp(theta, self.nodes, log_density, left=-np.inf, right=-np.inf))

    def _cdf_curve(self):
        xs = self.nodes
        fs = cumulative(self.density, self.grid)
        for location, mass in sorted(self.atoms):
            below = np.interp(location, xs, fs)
            k = np.searchsorted(xs, location, side="right")
            xs = np.concatenate([xs[:k], [location, location], xs[k:]])
            fs = np.concatenate([fs[:k], [below, below + mass], fs[k:] + mass])
        return xs, fs

    def cdf(self, theta):
        xs, fs = self._cdf_curve()
        return np.interp(theta, xs, fs, left=0.0, right=1.0)

    def quantile(self, p):
        xs, fs = self._cdf_curve()
        return float(np.interp(p, fs, xs))

    def tail_masses(self):
        """
        Returns
        ---
        (probability, probability) : posterior mass on theta > 0 and on theta < 0
        """
        w = self.grid.weights * self.density
        zero = self.nodes == 0
        positive = float(w[self.nodes > 0].sum() + 0.5 * w[zero].sum())
        negative = float(w[self.nodes < 0].sum() + 0.5 * w[zero].sum())
        positive += sum(mass for loc, mass in self.atoms if loc > 0)
        negative += sum(mass for loc, mass in self.atoms if loc < 0)
        return positive, negative

    def modes(self):
        """
        Local maxima of the continuous density, split into smooth modes and cusps

        A local maximum is a cusp when the second difference of the log density at twice the
        spacing is not about four times the one at the spacing (a kink scales linearly instead).
        """
        d = self.density
        with np.errstate(divide="ignore"):
            ld = np.log(d)
        smooth, cusps = [], []
        peaks = np.flatnonzero((d[1:-1] >= d[:-2]) & (d[1:-1] > d[2:])) + 1
        for i in peaks:
            if i < 2 or i > len(d) - 3 or not np.all(np.isfinite(ld[i - 2:i + 3])):
                smooth.append(self._refine_peak(i))
                continue
            c1 = ld[i - 1] - 2 * ld[i] + ld[i + 1]
            c2 = ld[i - 2] - 2 * ld[i] + ld[i + 2]
            if c1 != 0 and CUSP_RATIO[0] < c2 / c1 < CUSP_RATIO[1]:
                smooth.append(self._refine_peak(i))
            else:
                cusps.append((float(self.nodes[i]), float(d[i])))
        return smooth, cusps

    def _refine_peak(self, i):
        # Vertex of the parabola through the top node and its neighbours
        h = self.grid.spacing
        left, mid, right = self.density[i - 1], self.density[i], self.density[i + 1]
        curvature = left - 2 * mid + right
        shift = 0.0 if curvature == 0 else 0.5 * h * (left - right) / curvature
        return (float(self.nodes[i] + shift), float(mid))

    def mode(self):
        smooth, cusps = self.modes()
        if len(smooth) > 0:
            return max(smooth, key=lambda peak: peak[1])[0]
        if len(cusps) > 0:
            return max(cusps, key=lambda peak: peak[1])[0]
        return float(self.nodes[np.argmax(self.density)])

    def to_dict(self):
        return { "grid": self.grid.to_dict(), "atoms": [list(atom) for atom in self.atoms],
                 "normalization": self.normalization, "log_scale": self.log_scale,
                 "diagnostics": self.diagnostics }


def summarize(post, level=0.95):
    """
    Parameters
    ---
    post : PosteriorGrid
        normalized posterior
    level : probability
        credible level of the equal-tail interval

    Returns
    ---
    Summary : mean, mode, equal-tail credible interval and sign probabilities
    """
    _check_level(level)
    alpha = 1 - level
    smooth, cusps = post.modes()
    positive, negative = post.tail_masses()
    return Summary(mean=post.mean(), mode=post.mode(),
                   ci_lo=post.quantile(alpha / 2), ci_hi=post.quantile(1 - alpha / 2), level=level,
                   tail_prob_pos=positive, tail_prob_neg=negative,
                   atoms=[list(atom) for atom in post.atoms], spikes=[location for location, _ in cusps])


def posterior_expected_loss(post, loss, y):
    """
    Posterior expected loss of reporting the decision attached to observation y
    """
    loss = named_loss(loss)
    value = float(np.dot(post.grid.weights, post.density * loss.values(post.nodes, y, False)))
    return value + sum(mass * float(loss.values(np.asarray(loc), y, True)) for loc, mass in post.atoms)


def _mixed_kernel(kind, rule, lik):
    """
    log sum_lambda pi_2(lambda) pi_1(theta | lambda) / Pr(S | lambda), as a function of theta
    """
    hyper = discretize(kind.hyperprior)
    keep = hyper.masses > 0
    lambdas, masses = hyper.points[keep], hyper.masses[keep]
    probabilities = np.array([selection_probability_given_hyper(rule, lik, kind.conditional, lam) for lam in lambdas])
    if np.any(probabilities <= 0):
        raise NumericError("selection probability vanishes for a hyperparameter value",
                           location=lambdas[np.argmax(probabilities <= 0)])
    spread = probabilities.max() - probabilities.min()
    if spread < 1e-12:
        log.info("selection probability is constant in the hyperparameter; the mixed effect reduces to random")
    log_weights = np.log(masses) - np.log(probabilities)
    conditionals = [kind.conditional.given(lam) for lam in lambdas]

    def kernel(theta):
        theta = np.asarray(theta, dtype=float)
        out = np.empty(theta.shape)
        block = max(1, BLOCK_CELLS // len(conditionals))
        for start in range(0, len(theta), block):
            chunk = theta[start:start + block]
            terms = np.stack([w + prior.log_density(chunk) for w, prior in zip(log_weights, conditionals)])
            out[start:start + block] = special.logsumexp(terms, axis=0)
        return out

    return kernel, lambdas


def _grid_spacing(kind, prior, lik, lambdas=None):
    scales = [lik.sigma]
    if prior is not None and prior.proper and np.isfinite(prior.scale):
        scales.append(prior.scale)
    if isinstance(kind, Mixed):
        if kind.conditional.family == "normal_mean":
            scales.append(np.sqrt(kind.conditional.var))
        else:
            scales.append(1 / np.max(np.abs(lambdas)))
    return min(scales) / NODES_PER_SCALE


def _posterior_window(log_kernel, center, scale, spacing):
    """
    Grows [center - w, center + w] until the kernel has dropped by TAIL_DROP at both edges
    """
    half = [INITIAL_HALF_WIDTH * scale, INITIAL_HALF_WIDTH * scale]
    while True:
        grid = Grid.aligned(center - half[0], center + half[1], spacing)
        values = log_kernel(grid.nodes)
        top = np.max(values)
        if not np.isfinite(top):
            raise NumericError("posterior kernel vanishes on [{:.6g}, {:.6g}]".format(grid.lo, grid.hi))
        open_tails = [values[0] > top - TAIL_DROP, values[-1] > top - TAIL_DROP]
        if not any(open_tails):
            return grid, values
        if max(half) >= MAX_HALF_WIDTH * scale:
            tail = "both" if all(open_tails) else ("left" if open_tails[0] else "right")
            raise ImproperPosteriorError(
                "posterior mass does not decay in the {} tail within {:.6g} scale units; the adjusted "
                "posterior is improper or nearly so".format(tail, MAX_HALF_WIDTH), tail=tail)
        for side, still_open in enumerate(open_tails):
            if still_open:
                half[side] = min(2 * half[side], MAX_HALF_WIDTH * scale)
        log.debug("widening posterior window to [%.6g, %.6g]", center - half[0], center + half[1])


def normalized_posterior(log_kernel, center, scale, spacing, atoms=()):
    """
    Normalizes a log kernel on a window grown around center, then checks that doubling the window
    moves the normalization by less than WIDENING_TOLERANCE

    Parameters
    ---
    log_kernel : vectorized callable of the parameter
    center : where the window starts
    scale : unit of the window half-width
    spacing : grid spacing
    atoms : list of (location, log mass on the kernel scale)

    Returns
    ---
    PosteriorGrid
    """
    grid, values = _posterior_window(log_kernel, center, scale, spacing)
    post = PosteriorGrid.from_kernel(grid, values, atoms)
    wide = grid.widened(2.0)
    wider = PosteriorGrid.from_kernel(wide, log_kernel(wide.nodes), atoms)
    change = abs(wider.normalization * np.exp(wider.log_scale - post.log_scale) / post.normalization - 1)
    if change > WIDENING_TOLERANCE:
        raise ImproperPosteriorError("normalization changes by {:.3g} when the window is doubled".format(change),
                                     tail="both")
    return attr.evolve(post, diagnostics={ "spacing": spacing, "widening_change": change })


def sa_posterior(kind, prior, lik, rule, y):
    """
    Selection-adjusted posterior of theta given the selected observation y

    Parameters
    ---
    kind : Random, Fixed or Mixed (or the names "random", "fixed")
        when theta was generated relative to the selection
    prior : Prior
        prior of theta; ignored for the mixed kind, whose prior is its hyperprior and conditional;
        an improper (flat) prior is treated as a fixed effect
    lik : NormalLocation
    rule : SelectionRule
    y : real number
        the observation, which the rule must have selected

    Returns
    ---
    PosteriorGrid : normalized posterior on a grid wide enough to hold all but a negligible share of the mass
    """
    kind = effect_kind(kind)
    if not isinstance(lik, NormalLocation):
        raise UnsupportedCombinationError("sa_posterior works with the normal location likelihood; "
                                          "use gene_posterior for gene records")
    if not rule.contains(y):
        raise PreconditionError("observation {} is not in the selection region {}".format(y, rule.to_dict()))
    if isinstance(kind, Random) and prior is not None and not prior.proper:
        log.info("flat prior: treating theta as a fixed effect")
        kind = Fixed()

    lambdas = None
    if isinstance(kind, Mixed):
        hyper_kernel, lambdas = _mixed_kernel(kind, rule, lik)

        def log_kernel(theta):
            return hyper_kernel(theta) + lik.log_density(y, theta)

        atoms = []
    else:
        if prior is None:
            raise ConfigurationError("a prior is required for the {} effect kind".format(kind.name))

        def log_kernel(theta):
            value = prior.log_density(theta) + lik.log_density(y, theta)
            if isinstance(kind, Fixed):
                value = value - log_selection_probability(rule, lik, theta)
            return value

        atoms = []
        for location, mass in prior.atoms():
            value = np.log(mass) + float(lik.log_density(y, location))
            if isinstance(kind, Fixed):
                value -= log_selection_probability(rule, lik, location)
            atoms.append((location, value))

    spacing = _grid_spacing(kind, prior, lik, lambdas)
    post = normalized_posterior(log_kernel, y, lik.sigma, spacing, atoms)
    log.debug("posterior %s at y=%.6g on %r", kind.name, y, post.grid)
    return attr.evolve(post, diagnostics=dict(post.diagnostics, kind=kind.name))


def unadjusted_posterior(prior, lik, y):
    """
    Posterior ignoring the selection (the flat prior gives the likelihood itself)
    """
    return sa_posterior(Fixed() if not prior.proper else Random(), prior, lik, WholeSpace(), y)


@attr.s(frozen=True)
class SelectiveInterval:
    """
    Frequentist selective confidence set, a union of intervals

    warning is set when the set is empty, disconnected or unbounded within the scanned range.
    """
    intervals = attr.ib()
    alpha = attr.ib()
    warning = attr.ib(default=False)

    @property
    def lo(self):
        return self.intervals[0][0] if self.intervals else np.nan

    @property
    def hi(self):
        return self.intervals[-1][1] if self.intervals else np.nan

    def to_dict(self):
        return { "intervals": [list(interval) for interval in self.intervals], "alpha": self.alpha,
                 "warning": self.warning }


def _truncated_tails(lik, rule, y, theta0):
    """
    (Pr(Y <= y | Y in S, theta0), Pr(Y >= y | Y in S, theta0))
    """
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    intervals = rule.y_intervals()
    below = [log_interval_mass(lo, min(hi, y), theta0, lik.sigma) for lo, hi in intervals if lo < y]
    above = [log_interval_mass(max(lo, y), hi, theta0, lik.sigma) for lo, hi in intervals if hi > y]
    total = log_selection_probability(rule, lik, theta0)
    empty = np.full(theta0.shape, -np.inf)
    lower = special.logsumexp(np.stack(below), axis=0) if below else empty
    upper = special.logsumexp(np.stack(above), axis=0) if above else empty
    return np.exp(lower - total), np.exp(upper - total)


def selective_pvalue(lik, rule, y, theta0):
    """
    Two-sided p-value of H: theta = theta0 under the truncated likelihood f_S(y | theta0)
    """
    if not rule.contains(y):
        raise PreconditionError("observation {} is not in the selection region".format(y))
    lower, upper = _truncated_tails(lik, rule, y, theta0)
    value = np.minimum(1.0, 2 * np.minimum(lower, upper))
    return float(value[0]) if np.ndim(theta0) == 0 else value


def freq_selective_ci(lik, rule, y, alpha=0.05, points=2001, reach=20.0, tol=1e-6):
    """
    Confidence set inverting the equal-tail truncated-likelihood test

    Parameters
    ---
    lik : NormalLocation
    rule : SelectionRule
    y : real number, selected by the rule
    alpha : probability
        1 - confidence level
    points : number of theta0 values scanned over y +/- reach * sigma
    tol : bisection tolerance of the endpoints

    Returns
    ---
    SelectiveInterval : the accepted theta0 values
    """
    _check_level(alpha)
    if not isinstance(lik, NormalLocation):
        raise UnsupportedCombinationError("selective intervals are formed for the normal location likelihood")
    if not rule.contains(y):
        raise PreconditionError("observation {} is not in the selection region".format(y))

    def margin(theta0):
        lower, upper = _truncated_tails(lik, rule, y, theta0)
        return np.minimum(lower, upper) - alpha / 2

    thetas = np.linspace(y - reach * lik.sigma, y + reach * lik.sigma, points)
    accepted = margin(thetas) >= 0
    edges = []
    for i in np.flatnonzero(accepted[1:] != accepted[:-1]):
        edges.append(find_root(lambda t: float(margin(t)[0]), thetas[i], thetas[i + 1], tol=tol))
    bounds = ([-np.inf] if accepted[0] else []) + edges + ([np.inf] if accepted[-1] else [])
    intervals = [tuple(pair) for pair in zip(bounds[0::2], bounds[1::2])]
    warning = len(intervals) != 1 or not all(np.isfinite(intervals[0]))
    if warning:
        log.warning("selective confidence set at y=%.6g is %s", y, intervals or "empty")
    return SelectiveInterval(intervals, alpha, warning)


def _kind_name(kind):
    if isinstance(kind, str):
        return kind
    return kind.name


def compound_selection_posterior(hyper_var, y, sampling_var, kind, level=0.95, nodes=801, reach=8.0):
    """
    Posterior of the second of two compound effects, reported because y[1] >= y[0]

    lambda ~ N(0, 1 - hyper_var) and mu_j | lambda ~ N(lambda, hyper_var), so (mu_1, mu_2) is bivariate
    normal with unit variances and covariance 1 - hyper_var; y_j ~ N(mu_j, sampling_var).

    Parameters
    ---
    hyper_var : real number in [0, 1]
    y : pair of observations
    sampling_var : positive real number
    kind : "random", "fixed" or "mixed" (or an EffectKind)
    level : credible level of the reported interval

    Returns
    ---
    Summary : posterior summary of mu_2
    """
    if not 0 <= hyper_var <= 1:
        raise DomainError("hyper_var must lie in [0, 1], got {}".format(hyper_var))
    if not sampling_var > 0:
        raise DomainError("sampling_var must be positive, got {}".format(sampling_var))
    name = _kind_name(kind)
    if name not in ("random", "fixed", "mixed"):
        raise ConfigurationError("unknown effect kind {}".format(kind))
    y1, y2 = float(y[0]), float(y[1])
    if y2 < y1:
        raise PreconditionError("the pair {} is not selected: y2 < y1".format(tuple(y)))
    if name == "mixed":
        # Y2 - Y1 | lambda ~ N(0, 2 hyper_var + 2 sampling_var), so Pr(S | lambda) = 1/2 for every lambda
        log.info("selection probability given the hyperparameter is 1/2; the mixed effect reduces to random")
        name = "random"

    grid = Grid(-reach, reach, nodes)
    if hyper_var == 0:
        # mu_1 = mu_2 and Pr(S | mu) = 1/2 for both kinds
        log_kernel = -0.5 * grid.nodes ** 2 - ((y1 - grid.nodes) ** 2 + (y2 - grid.nodes) ** 2) / (2 * sampling_var)
        return summarize(PosteriorGrid.from_kernel(grid, log_kernel), level)

    mu1, mu2 = grid.nodes[:, None], grid.nodes[None, :]
    covariance = 1 - hyper_var
    determinant = 1 - covariance ** 2
    log_prior = -(mu1 ** 2 - 2 * covariance * mu1 * mu2 + mu2 ** 2) / (2 * determinant)
    log_lik = -((y1 - mu1) ** 2 + (y2 - mu2) ** 2) / (2 * sampling_var)
    log_kernel = log_prior + log_lik
    if name == "fixed":
        log_kernel = log_kernel - special.log_ndtr((mu2 - mu1) / np.sqrt(2 * sampling_var))
    kernel = np.exp(log_kernel - log_kernel.max())
    marginal = grid.weights @ kernel
    with np.errstate(divide="ignore"):
        return summarize(PosteriorGrid.from_kernel(grid, np.log(marginal)), level)


def credible_intervals(kind, prior, lik, rule, ys, level=0.95, spacing=None):
    """
    Equal-tail credible intervals for many selected observations on one shared grid

    Used for coverage bookkeeping over simulated data sets; the shared grid spans the observations
    and the prior, so one-sided rules with heavy-tailed adjusted posteriors belong in sa_posterior.

    Returns
    ---
    (array, array) : lower and upper interval endpoints per observation
    """
    _check_level(level)
    kind = effect_kind(kind)
    if isinstance(kind, Mixed):
        raise UnsupportedCombinationError("batched intervals support the random and fixed kinds")
    if not prior.proper:
        kind = Fixed()
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    if len(ys) == 0:
        return np.empty(0), np.empty(0)
    sigma = lik.sigma
    window = (ys.min() - 12 * sigma, ys.max() + 12 * sigma)
    if spacing is None:
        spacing = _grid_spacing(kind, prior, lik) * 2
    points = discretize(prior, spacing, window=window if not prior.proper else None)
    if prior.proper:
        inside = (points.points >= window[0]) & (points.points <= window[1]) | points.is_atom
        points = attr.evolve(points, points=points.points[inside], masses=points.masses[inside],
                             is_atom=points.is_atom[inside])
    order = np.argsort(points.points, kind="stable")
    theta, log_masses = points.points[order], points.log_masses[order]
    if isinstance(kind, Fixed):
        log_masses = log_masses - log_selection_probability(rule, lik, theta)
    alpha = 1 - level
    lo, hi = np.empty(len(ys)), np.empty(len(ys))
    block = max(1, BLOCK_CELLS // len(theta))
    for start in range(0, len(ys), block):
        chunk = ys[start:start + block, None]
        log_weight = lik.log_density(chunk, theta[None, :]) + log_masses[None, :]
        weight = np.exp(log_weight - log_weight.max(axis=1, keepdims=True))
        running = np.cumsum(weight, axis=1) - weight / 2
        running /= weight.sum(axis=1, keepdims=True)
        for row in range(len(chunk)):
            lo[start + row] = np.interp(alpha / 2, running[row], theta)
            hi[start + row] = np.interp(1 - alpha / 2, running[row], theta)
    return lo, hi


def normal_interval(y, sigma, level):
    """
    Marginal y +/- z_{(1+level)/2} sigma
    """
    half = normal_quantile((1 + level) / 2) * sigma
    return np.asarray(y) - half, np.asarray(y) + half


def credible_interval_coverage(kind, prior, lik, rule, ys, theta, level=0.95, spacing=None):
    """
    Coverage ledger of saBayes credible intervals for selected observations with known parameters

    Parameters
    ---
    ys : array-like of selected observations
    theta : array-like of the parameters behind ys

    Returns
    ---
    CoverageLedger : R intervals of which V miss their parameter
    """
    lo, hi = credible_intervals(kind, prior, lik, rule, ys, level, spacing)
    return interval_coverage(lo, hi, theta)
