import logging

import attr
import numpy as np
from scipy import optimize, special
from scipy.integrate import cumulative_trapezoid

from sabayes.model.errors import BracketingError, DomainError, NumericError

log = logging.getLogger(__name__)

DEFAULT_NODES = 4001
DEFAULT_TOLERANCE = 1e-4
SCHEMES = ("trapezoid", "simpson")


def normal_cdf(x):
    """
    Parameters
    ---
    x : real number or array-like
        finite evaluation point(s)

    Returns
    ---
    real number or array : the standard normal distribution function at x
    """
    value = special.ndtr(x)
    return float(value) if np.ndim(value) == 0 else value


def log_normal_cdf(x):
    """
    Logarithm of the standard normal distribution function, accurate far into the lower tail
    """
    value = special.log_ndtr(x)
    return float(value) if np.ndim(value) == 0 else value


def normal_pdf(x):
    return np.exp(-0.5 * np.square(x)) / np.sqrt(2 * np.pi)


def normal_quantile(p):
    """
    Parameters
    ---
    p : probability or array-like of probabilities, strictly inside (0, 1)

    Returns
    ---
    real number or array : the standard normal quantile of p
    """
    p = np.asarray(p, dtype=float)
    if np.any(~(p > 0) | ~(p < 1)):
        raise DomainError("normal_quantile requires 0 < p < 1, got {}".format(p))
    value = special.ndtri(p)
    return float(value) if np.ndim(value) == 0 else value


def _check_degrees_of_freedom(nu):
    if not np.all(np.asarray(nu, dtype=float) > 0):
        raise DomainError("degrees of freedom must be positive, got {}".format(nu))


def t_cdf(x, nu):
    """
    Student t distribution function with (possibly non-integer) nu degrees of freedom

    Parameters
    ---
    x : real number or array-like
    nu : positive real number

    Returns
    ---
    real number or array : F_nu(x)
    """
    _check_degrees_of_freedom(nu)
    if np.isinf(nu):
        return normal_cdf(x)
    value = special.stdtr(nu, x)
    return float(value) if np.ndim(value) == 0 else value


def t_quantile(p, nu):
    """
    Inverse of t_cdf in its first argument
    """
    _check_degrees_of_freedom(nu)
    p = np.asarray(p, dtype=float)
    if np.any(~(p > 0) | ~(p < 1)):
        raise DomainError("t_quantile requires 0 < p < 1, got {}".format(p))
    value = special.stdtrit(nu, p)
    return float(value) if np.ndim(value) == 0 else value


@attr.s(frozen=True, eq=False, repr=False)
class Grid:
    """
    Explicit one-dimensional quadrature grid

    Nodes are equally spaced on [lo, hi]. The trapezoid scheme is the default; the Simpson
    scheme requires an odd node count. In both schemes the weights sum to hi - lo.
    """
    lo = attr.ib(converter=float)
    hi = attr.ib(converter=float)
    n = attr.ib(converter=int, default=DEFAULT_NODES)
    scheme = attr.ib(default="trapezoid")
    nodes = attr.ib(init=False)
    weights = attr.ib(init=False)

    def __attrs_post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or self.hi <= self.lo:
            raise DomainError("grid bounds must be finite with lo < hi, got [{}, {}]".format(self.lo, self.hi))
        if self.n < 2:
            raise DomainError("grid needs at least 2 nodes, got {}".format(self.n))
        if self.scheme not in SCHEMES:
            raise DomainError("unknown quadrature scheme {}".format(self.scheme))
        if self.scheme == "simpson" and self.n % 2 == 0:
            raise DomainError("the Simpson scheme needs an odd node count, got {}".format(self.n))

        nodes = np.linspace(self.lo, self.hi, self.n)
        h = (self.hi - self.lo) / (self.n - 1)
        if self.scheme == "trapezoid":
            weights = np.full(self.n, h)
            weights[0] = weights[-1] = h / 2
        else:
            weights = np.full(self.n, 2 * h / 3)
            weights[1::2] = 4 * h / 3
            weights[0] = weights[-1] = h / 3
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def aligned(cls, lo, hi, spacing, scheme="trapezoid"):
        """
        Grid whose nodes are integer multiples of spacing and which covers [lo, hi]

        Keeps 0 (and any other multiple of spacing, such as the kink of a Laplace density) on a node.
        """
        start = np.floor(lo / spacing) * spacing
        stop = np.ceil(hi / spacing) * spacing
        n = int(round((stop - start) / spacing)) + 1
        if scheme == "simpson" and n % 2 == 0:
            stop += spacing
            n += 1
        return cls(start, stop, max(n, 3), scheme)

    @property
    def spacing(self):
        return (self.hi - self.lo) / (self.n - 1)

    def refined(self):
        """
        Returns
        ---
        Grid : the same support with the spacing halved (2n - 1 nodes)
        """
        return Grid(self.lo, self.hi, 2 * self.n - 1, self.scheme)

    def widened(self, factor=2.0):
        """
        Returns
        ---
        Grid : a grid with the same center and spacing covering factor times the width
        """
        center = (self.lo + self.hi) / 2
        half = (self.hi - self.lo) * factor / 2
        return Grid.aligned(center - half, center + half, self.spacing, self.scheme)

    def __len__(self):
        return self.n

    def __repr__(self):
        return "Grid(lo={:.6g}, hi={:.6g}, n={}, scheme={})".format(self.lo, self.hi, self.n, self.scheme)

    def to_dict(self):
        return { "lo": self.lo, "hi": self.hi, "n": self.n, "scheme": self.scheme }


def evaluate(f, grid):
    """
    Evaluates an integrand on the grid nodes, rejecting non-finite values

    Parameters
    ---
    f : callable or array-like
        vectorized function of the nodes, or its values on the nodes
    grid : Grid

    Returns
    ---
    array : values of f on grid.nodes
    """
    values = f(grid.nodes) if callable(f) else f
    values = np.broadcast_to(np.asarray(values, dtype=float), grid.nodes.shape)
    bad = ~np.isfinite(values)
    if bad.any():
        raise NumericError("integrand is not finite", location=grid.nodes[np.argmax(bad)])
    return values


def integrate(f, grid):
    """
    Parameters
    ---
    f : callable or array-like
        integrand, vectorized over the nodes, or its values on the nodes
    grid : Grid
        quadrature grid

    Returns
    ---
    real number : the quadrature value of the integral of f over [grid.lo, grid.hi]
    """
    return float(np.dot(grid.weights, evaluate(f, grid)))


def richardson_delta(f, grid):
    """
    Relative change of the quadrature value when the node spacing is halved

    Used as a convergence diagnostic; smooth integrands on the default grids stay below 1e-8.
    """
    coarse = integrate(f, grid)
    fine = integrate(f, grid.refined())
    delta = abs(fine - coarse) / max(abs(fine), np.finfo(float).tiny)
    log.debug("richardson check on %r: %.3e -> %.3e (delta %.2e)", grid, coarse, fine, delta)
    return delta


def cumulative(values, grid):
    """
    Running trapezoid integral of values along the grid, starting at 0 on the first node
    """
    return cumulative_trapezoid(evaluate(values, grid), grid.nodes, initial=0.0)


def find_root(g, lo, hi, tol=DEFAULT_TOLERANCE):
    """
    Bisection root finder for a monotone function

    Parameters
    ---
    g : callable
        real function, monotone on [lo, hi]
    lo, hi : real numbers
        bracket, g(lo) and g(hi) must not share a strict sign
    tol : positive real number
        width of the final bracket

    Returns
    ---
    real number : a root of g within tol
    """
    g_lo, g_hi = float(g(lo)), float(g(hi))
    if g_lo == 0:
        return float(lo)
    if g_hi == 0:
        return float(hi)
    if not (np.isfinite(g_lo) and np.isfinite(g_hi)) or np.sign(g_lo) == np.sign(g_hi):
        raise BracketingError("no sign change on [{:.6g}, {:.6g}]: g = {:.6g}, {:.6g}".format(lo, hi, g_lo, g_hi))
    return float(optimize.bisect(g, lo, hi, xtol=tol, maxiter=500))


@attr.s(frozen=True)
class RngStream:
    """
    Reproducible random stream identified by (seed, stream_id)

    generator() always returns a fresh numpy Generator positioned at the start of the stream, so a
    stream value can be shipped to a worker and replayed there. Sub-streams extend the spawn key and
    are independent of each other and of their parent.
    """
    seed = attr.ib(converter=int)
    stream_id = attr.ib(converter=int, default=0)
    path = attr.ib(converter=tuple, default=())

    @seed.validator
    @stream_id.validator
    def _check_unsigned(self, attribute, value):
        if not 0 <= value < 2 ** 64:
            raise DomainError("{} must be a 64-bit unsigned integer, got {}".format(attribute.name, value))

    def generator(self):
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,) + self.path)
        return np.random.Generator(np.random.PCG64(sequence))

    def substream(self, index):
        return RngStream(self.seed, self.stream_id, self.path + (int(index),))

    def to_dict(self):
        return { "seed": self.seed, "stream_id": self.stream_id, "path": list(self.path) }
