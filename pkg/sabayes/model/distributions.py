import logging
from functools import cached_property

import attr
import numpy as np
from scipy import special, stats

from sabayes.model.errors import ConfigurationError, DomainError
from sabayes.model.numerics import Grid, log_normal_cdf, normal_cdf

log = logging.getLogger(__name__)

# Tail widths (in units of the component scale) beyond which density mass is below 1e-17
NORMAL_TAIL = 9.0
LAPLACE_TAIL = 40.0
NODES_PER_SCALE = 100


def _positive(instance, attribute, value):
    if not value > 0:
        raise DomainError("{} must be strictly positive, got {}".format(attribute.name, value))


def _probability(instance, attribute, value):
    if not 0 <= value <= 1:
        raise DomainError("{} must lie in [0, 1], got {}".format(attribute.name, value))


def log_interval_mass(lo, hi, mean, sd):
    """
    log Pr(lo < X < hi) for X ~ N(mean, sd^2), stable in both tails and vectorized over mean

    Parameters
    ---
    lo, hi : real numbers, possibly infinite, lo < hi
    mean : real number or array
    sd : positive real number

    Returns
    ---
    array : the log probabilities
    """
    a = (lo - np.asarray(mean, dtype=float)) / sd
    b = (hi - np.asarray(mean, dtype=float)) / sd
    upper = a > 0
    # Work with the upper tail when the whole interval lies above the mean
    big = np.where(upper, log_normal_cdf(-a), log_normal_cdf(b))
    small = np.where(upper, log_normal_cdf(-b), log_normal_cdf(a))
    with np.errstate(divide="ignore"):
        return big + np.log1p(-np.exp(small - big))


class Prior:
    """
    Density specification for a scalar parameter

    A prior is a continuous part (density(), possibly improper) plus a list of atoms (location, mass).
    Concrete variants are attrs value types; they are immutable and may be shared across workers.
    """
    proper = True

    def density(self, theta):
        return np.exp(self.log_density(theta))

    def log_density(self, theta):
        raise NotImplementedError

    def atoms(self):
        return []

    @property
    def atom_mass(self):
        return sum(mass for _, mass in self.atoms())

    def support(self):
        """
        Returns
        ---
        (real, real) or None : window holding all but a negligible share of the continuous mass
        """
        raise NotImplementedError

    @property
    def scale(self):
        """
        Smallest length scale of the continuous part; sets default grid spacing
        """
        raise NotImplementedError

    def interval_mass(self, lo, hi):
        """
        Prior probability of the open interval (lo, hi), atoms included
        """
        raise NotImplementedError

    def sample(self, generator, size):
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError

    def _atoms_inside(self, lo, hi):
        return sum(mass for location, mass in self.atoms() if lo < location < hi)


@attr.s(frozen=True)
class Normal(Prior):
    mean = attr.ib(converter=float, default=0.0)
    var = attr.ib(converter=float, default=1.0, validator=_positive)

    @property
    def sd(self):
        return np.sqrt(self.var)

    def log_density(self, theta):
        z = (np.asarray(theta, dtype=float) - self.mean) / self.sd
        return -0.5 * z * z - np.log(self.sd) - 0.5 * np.log(2 * np.pi)

    def support(self):
        return (self.mean - NORMAL_TAIL * self.sd, self.mean + NORMAL_TAIL * self.sd)

    @property
    def scale(self):
        return self.sd

    def interval_mass(self, lo, hi):
        return float(np.exp(log_interval_mass(lo, hi, self.mean, self.sd)))

    def sample(self, generator, size):
        return generator.normal(self.mean, self.sd, size)

    def to_dict(self):
        return { "type": "normal", "mean": self.mean, "var": self.var }


@attr.s(frozen=True)
class Laplace(Prior):
    """
    rate * exp(-rate * |theta - location|) / 2
    """
    rate = attr.ib(converter=float, validator=_positive)
    location = attr.ib(converter=float, default=0.0)

    def log_density(self, theta):
        return np.log(self.rate / 2) - self.rate * np.abs(np.asarray(theta, dtype=float) - self.location)

    def support(self):
        return (self.location - LAPLACE_TAIL / self.rate, self.location + LAPLACE_TAIL / self.rate)

    @property
    def scale(self):
        return 1 / self.rate

    def cdf(self, x):
        z = self.rate * (np.asarray(x, dtype=float) - self.location)
        return np.where(z < 0, 0.5 * np.exp(np.minimum(z, 0)), 1 - 0.5 * np.exp(-np.maximum(z, 0)))

    def interval_mass(self, lo, hi):
        return float(self.cdf(hi) - self.cdf(lo))

    def sample(self, generator, size):
        return generator.laplace(self.location, 1 / self.rate, size)

    def to_dict(self):
        return { "type": "laplace", "rate": self.rate, "location": self.location }


def _components(value):
    return tuple((float(weight), prior) for weight, prior in value)


@attr.s(frozen=True)
class Mixture(Prior):
    """
    Finite mixture sum_k w_k * prior_k
    """
    components = attr.ib(converter=_components)

    @components.validator
    def _check(self, attribute, value):
        if len(value) == 0:
            raise DomainError("a mixture needs at least one component")
        weights = np.array([weight for weight, _ in value])
        if np.any(weights <= 0) or abs(weights.sum() - 1) > 1e-12:
            raise DomainError("mixture weights must be positive and sum to 1, got {}".format(weights.tolist()))
        if not all(prior.proper for _, prior in value):
            raise DomainError("mixture components must be proper")

    @property
    def weights(self):
        return np.array([weight for weight, _ in self.components])

    def log_density(self, theta):
        theta = np.asarray(theta, dtype=float)
        terms = [np.log(weight) + prior.log_density(theta)
                 for weight, prior in self.components if prior.atom_mass < 1]
        if len(terms) == 0:
            return np.full(theta.shape, -np.inf)
        return special.logsumexp(np.stack(terms), axis=0)

    def atoms(self):
        return [(location, weight * mass) for weight, prior in self.components for location, mass in prior.atoms()]

    def support(self):
        windows = [prior.support() for _, prior in self.components if prior.atom_mass < 1]
        if len(windows) == 0:
            return None
        return (min(lo for lo, _ in windows), max(hi for _, hi in windows))

    @property
    def scale(self):
        return min(prior.scale for _, prior in self.components if prior.atom_mass < 1)

    def interval_mass(self, lo, hi):
        return float(sum(weight * prior.interval_mass(lo, hi) for weight, prior in self.components))

    def sample(self, generator, size):
        labels = generator.choice(len(self.components), size=size, p=self.weights)
        draws = np.empty(size)
        for k, (_, prior) in enumerate(self.components):
            chosen = labels == k
            draws[chosen] = prior.sample(generator, int(chosen.sum()))
        return draws

    def to_dict(self):
        return { "type": "mixture",
                 "components": [{ "weight": weight, "prior": prior.to_dict() } for weight, prior in self.components] }


@attr.s(frozen=True)
class ScaledInvChiSq(Prior):
    """
    Scaled inverse chi-square density of a variance: sigma^2 ~ nu0 * s0sq / chi^2_{nu0}
    """
    nu0 = attr.ib(converter=float, validator=_positive)
    s0sq = attr.ib(converter=float, validator=_positive)

    @cached_property
    def distribution(self):
        return stats.invgamma(a=self.nu0 / 2, scale=self.nu0 * self.s0sq / 2)

    def log_density(self, sigma2):
        sigma2 = np.asarray(sigma2, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(sigma2 > 0, self.distribution.logpdf(np.where(sigma2 > 0, sigma2, 1.0)), -np.inf)

    def support(self):
        return (float(self.distribution.ppf(1e-15)), float(self.distribution.isf(1e-12)))

    @property
    def scale(self):
        return self.s0sq

    def interval_mass(self, lo, hi):
        return float(self.distribution.cdf(max(hi, 0)) - self.distribution.cdf(max(lo, 0)))

    def sample(self, generator, size):
        return self.nu0 * self.s0sq / generator.chisquare(self.nu0, size)

    def to_dict(self):
        return { "type": "scaled_inv_chi_square", "nu0": self.nu0, "s0sq": self.s0sq }


@attr.s(frozen=True)
class Flat(Prior):
    """
    Improper flat prior, density identically 1

    Usable only where the resulting posterior is verified integrable.
    """
    proper = False

    def log_density(self, theta):
        return np.zeros(np.shape(theta))

    def support(self):
        return None

    @property
    def scale(self):
        return np.inf

    def interval_mass(self, lo, hi):
        return float(hi - lo)

    def sample(self, generator, size):
        raise ConfigurationError("cannot sample from the improper flat prior")

    def to_dict(self):
        return { "type": "flat" }


def _values(value):
    return tuple(float(v) for v in value)


@attr.s(frozen=True)
class Discrete(Prior):
    """
    Purely atomic prior: mass weights[k] at values[k]
    """
    values = attr.ib(converter=_values)
    weights = attr.ib(converter=_values)

    @weights.validator
    def _check(self, attribute, value):
        if len(value) != len(self.values) or len(value) == 0:
            raise DomainError("discrete prior needs one weight per value")
        if any(w <= 0 for w in value) or abs(sum(value) - 1) > 1e-12:
            raise DomainError("discrete prior weights must be positive and sum to 1, got {}".format(list(value)))

    def log_density(self, theta):
        return np.full(np.shape(theta), -np.inf)

    def atoms(self):
        return list(zip(self.values, self.weights))

    def support(self):
        return None

    @property
    def scale(self):
        return np.inf

    def interval_mass(self, lo, hi):
        return float(self._atoms_inside(lo, hi))

    def sample(self, generator, size):
        return generator.choice(np.array(self.values), size=size, p=np.array(self.weights))

    def to_dict(self):
        return { "type": "discrete", "values": list(self.values), "weights": list(self.weights) }


def PointMass(location):
    return Discrete((location,), (1.0,))


@attr.s(frozen=True)
class TwoGroup(Prior):
    """
    theta = 0 with probability pi0 (true null), theta ~ alt otherwise
    """
    pi0 = attr.ib(converter=float, validator=_probability)
    alt = attr.ib()

    def log_density(self, theta):
        if self.pi0 == 1:
            return np.full(np.shape(theta), -np.inf)
        return np.log1p(-self.pi0) + self.alt.log_density(theta)

    def atoms(self):
        atoms = [(0.0, self.pi0)] if self.pi0 > 0 else []
        return atoms + [(location, (1 - self.pi0) * mass) for location, mass in self.alt.atoms()]

    def support(self):
        return self.alt.support()

    @property
    def scale(self):
        return self.alt.scale

    def interval_mass(self, lo, hi):
        null = self.pi0 if lo < 0 < hi else 0.0
        return float(null + (1 - self.pi0) * self.alt.interval_mass(lo, hi))

    def sample(self, generator, size):
        null = generator.random(size) < self.pi0
        draws = np.where(null, 0.0, self.alt.sample(generator, size))
        return draws

    def to_dict(self):
        return { "type": "two_group", "pi0": self.pi0, "alt": self.alt.to_dict() }


def prior_density(prior, theta):
    """
    Parameters
    ---
    prior : Prior
    theta : real number or array-like

    Returns
    ---
    nonnegative real number or array : density of the continuous part at theta (1 for the flat prior)
    """
    value = prior.density(theta)
    return float(value) if np.ndim(value) == 0 else value


@attr.s(frozen=True, eq=False)
class Discretization:
    """
    A prior reduced to weighted points: quadrature nodes carrying weight * density plus the atoms
    """
    points = attr.ib()
    masses = attr.ib()
    is_atom = attr.ib()
    grid = attr.ib(default=None)

    def expect(self, values):
        """
        Sum of masses * values, where values are given on points (last axis)
        """
        return np.dot(np.asarray(values, dtype=float), self.masses)

    @property
    def log_masses(self):
        with np.errstate(divide="ignore"):
            return np.log(self.masses)


def discretize(prior, spacing=None, window=None, scheme="trapezoid"):
    """
    Parameters
    ---
    prior : Prior
        prior to reduce
    spacing : positive real number
        node spacing, defaults to prior.scale / 100
    window : (real, real)
        integration window, defaults to prior.support(); required for the flat prior

    Returns
    ---
    Discretization : weighted points such that sum(masses * g(points)) approximates E g(theta)
    """
    points, masses, flags, grid = [], [], [], None
    if prior.atom_mass < 1:
        window = window or prior.support()
        if spacing is None:
            spacing = prior.scale / NODES_PER_SCALE
        if window is None or not np.isfinite(spacing):
            raise ConfigurationError("an integration window and spacing are required for {}".format(type(prior).__name__))
        grid = Grid.aligned(window[0], window[1], spacing, scheme)
        points.append(grid.nodes)
        masses.append(grid.weights * prior.density(grid.nodes))
        flags.append(np.zeros(grid.n, dtype=bool))
    atoms = prior.atoms()
    if len(atoms) > 0:
        points.append(np.array([location for location, _ in atoms]))
        masses.append(np.array([mass for _, mass in atoms]))
        flags.append(np.ones(len(atoms), dtype=bool))
    return Discretization(np.concatenate(points), np.concatenate(masses), np.concatenate(flags), grid)


@attr.s(frozen=True)
class NormalLocation:
    """
    y = theta + sigma * epsilon, epsilon standard normal
    """
    sigma = attr.ib(converter=float, default=1.0, validator=_positive)

    def log_density(self, y, theta):
        z = (np.asarray(y, dtype=float) - np.asarray(theta, dtype=float)) / self.sigma
        return -0.5 * z * z - np.log(self.sigma) - 0.5 * np.log(2 * np.pi)

    def density(self, y, theta):
        return np.exp(self.log_density(y, theta))

    def cdf(self, y, theta):
        return normal_cdf((np.asarray(y, dtype=float) - np.asarray(theta, dtype=float)) / self.sigma)

    def sample(self, theta, generator):
        theta = np.asarray(theta, dtype=float)
        return theta + self.sigma * generator.standard_normal(theta.shape)

    def to_dict(self):
        return { "type": "normal_location", "sigma": self.sigma }


def _at_least(bound):
    def check(instance, attribute, value):
        if value < bound:
            raise DomainError("{} must be at least {}, got {}".format(attribute.name, bound, value))
    return check


@attr.s(frozen=True)
class MeanAndVariance:
    """
    Given (mu, sigma^2): the sample mean is N(mu, sigma^2 / n), independent of the sample variance
    distributed as sigma^2 * chi^2_df / df
    """
    n = attr.ib(converter=int, default=4, validator=_at_least(1))
    df = attr.ib(converter=float, default=3.0, validator=_at_least(1))

    def log_density(self, ybar, s2, mu, sigma2):
        ybar, s2 = np.asarray(ybar, dtype=float), np.asarray(s2, dtype=float)
        mu, sigma2 = np.asarray(mu, dtype=float), np.asarray(sigma2, dtype=float)
        log_mean = stats.norm.logpdf(ybar, loc=mu, scale=np.sqrt(sigma2 / self.n))
        log_variance = stats.chi2.logpdf(self.df * s2 / sigma2, self.df) + np.log(self.df / sigma2)
        return log_mean + log_variance

    def sample(self, mu, sigma2, generator):
        mu = np.asarray(mu, dtype=float)
        sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=float), mu.shape)
        ybar = mu + np.sqrt(sigma2 / self.n) * generator.standard_normal(mu.shape)
        s2 = sigma2 * generator.chisquare(self.df, mu.shape) / self.df
        return ybar, s2

    def to_dict(self):
        return { "type": "mean_and_variance", "n": self.n, "df": self.df }


CONDITIONAL_FAMILIES = ("laplace_rate", "normal_mean")


@attr.s(frozen=True)
class ConditionalPrior:
    """
    lambda-indexed prior over theta: Laplace(rate=lambda) or N(lambda, var)
    """
    family = attr.ib()
    var = attr.ib(default=None)

    @family.validator
    def _check(self, attribute, value):
        if value not in CONDITIONAL_FAMILIES:
            raise ConfigurationError("unknown conditional family {}, expected one of {}".format(value, CONDITIONAL_FAMILIES))
        if value == "normal_mean" and not (self.var is not None and self.var > 0):
            raise ConfigurationError("the normal_mean conditional needs a positive var")

    def given(self, lam):
        if self.family == "laplace_rate":
            return Laplace(rate=lam)
        return Normal(mean=lam, var=self.var)

    def to_dict(self):
        document = { "family": self.family }
        if self.var is not None:
            document["var"] = self.var
        return document


@attr.s(frozen=True)
class Random:
    """
    The parameter is generated with the data and selection is applied to (theta, y)
    """
    name = "random"

    def to_dict(self):
        return self.name


@attr.s(frozen=True)
class Fixed:
    """
    The parameter is generated before the data; selection is applied to y only
    """
    name = "fixed"

    def to_dict(self):
        return self.name


@attr.s(frozen=True)
class Mixed:
    """
    A "fixed" hyperparameter lambda ~ hyperprior with a "random" theta | lambda ~ conditional.given(lambda)
    """
    name = "mixed"
    hyperprior = attr.ib()
    conditional = attr.ib()

    @hyperprior.validator
    def _check(self, attribute, value):
        if not value.proper:
            raise ConfigurationError("the hyperprior of a mixed effect must be proper")

    def marginal_prior(self):
        """
        Prior of theta after integrating out lambda, available when the hyperprior is atomic
        """
        if self.hyperprior.atom_mass < 1:
            raise ConfigurationError("the marginal prior is only formed for atomic hyperpriors")
        return Mixture([(mass, self.conditional.given(location)) for location, mass in self.hyperprior.atoms()])

    def to_dict(self):
        return { "type": self.name, "hyperprior": self.hyperprior.to_dict(), "conditional": self.conditional.to_dict() }
