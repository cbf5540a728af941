import attr
import numpy as np

from sabayes.model.distributions import NormalLocation, discretize
from sabayes.model.errors import ConfigurationError, UnsupportedCombinationError

# Number of (y, theta) cells evaluated per block when forming posterior loss curves
BLOCK_CELLS = 1 << 22


def _intervals(value):
    return tuple((float(lo), float(hi)) for lo, hi in value)


class Loss:
    """
    Named loss L(theta, y) of a selection decision

    values() is evaluated on quadrature points: a continuous node lying exactly on a discontinuity
    of L receives the average of both sides, while an atom receives the exact value.
    cells() partitions the observation line into intervals on which L does not depend on y.
    """
    name = None

    def values(self, theta, y, is_atom):
        raise NotImplementedError

    def cells(self):
        return [(-np.inf, np.inf, 0.0)]

    def to_dict(self):
        return self.name


@attr.s(frozen=True)
class Directional(Loss):
    """
    I(sign theta != sign y); y = 0 is scored as a positive call, so the loss at y = 0 is P(theta < 0 | y)
    """
    name = "directional"

    def values(self, theta, y, is_atom):
        theta, y = np.asarray(theta, dtype=float), np.asarray(y, dtype=float)
        wrong = np.where(y < 0, theta > 0, theta < 0).astype(float)
        return np.where(theta == 0, np.where(is_atom, 1.0, 0.5), wrong)

    def cells(self):
        return [(-np.inf, 0.0, -1.0), (0.0, np.inf, 1.0)]


@attr.s(frozen=True)
class Membership(Loss):
    """
    I(theta not in A) with A a union of open intervals
    """
    name = "membership"
    intervals = attr.ib(converter=_intervals)

    def values(self, theta, y, is_atom):
        theta = np.asarray(theta, dtype=float)
        inside = np.zeros(theta.shape)
        for lo, hi in self.intervals:
            inside += (theta > lo) & (theta < hi)
            edge = (theta == lo) | (theta == hi)
            inside += np.where(edge & ~np.asarray(is_atom), 0.5, 0.0)
        inside = np.minimum(inside, 1.0)
        return np.broadcast_to(1.0 - inside, np.broadcast(theta, np.asarray(y)).shape)

    def to_dict(self):
        return { "type": self.name, "set": [list(interval) for interval in self.intervals] }


@attr.s(frozen=True)
class TwoGroupNull(Loss):
    """
    I(theta = 0): the discovery is false exactly when the true-null atom holds
    """
    name = "two_group_null"

    def values(self, theta, y, is_atom):
        theta = np.asarray(theta, dtype=float)
        value = ((theta == 0) & np.asarray(is_atom)).astype(float)
        return np.broadcast_to(value, np.broadcast(theta, np.asarray(y)).shape)


@attr.s(frozen=True)
class ZeroLoss(Loss):
    name = "zero"

    def values(self, theta, y, is_atom):
        return np.zeros(np.broadcast(np.asarray(theta), np.asarray(y)).shape)


LOSSES = { "directional": Directional, "two_group_null": TwoGroupNull, "zero": ZeroLoss }


def named_loss(document):
    """
    Parameters
    ---
    document : string or dictionary
        a loss name, or {"type": "membership", "set": [[lo, hi], ...]}

    Returns
    ---
    Loss : the named loss
    """
    if isinstance(document, Loss):
        return document
    if isinstance(document, str) and document in LOSSES:
        return LOSSES[document]()
    if isinstance(document, dict) and document.get("type") == "membership":
        if "set" not in document:
            raise ConfigurationError("membership loss requires a 'set' of intervals")
        return Membership(document["set"])
    if isinstance(document, dict) and document.get("type") in LOSSES:
        return LOSSES[document["type"]]()
    raise ConfigurationError("unknown loss {}, expected one of {} or membership".format(document, sorted(LOSSES)))


def posterior_loss_curve(prior, lik, loss, ys, spacing=None):
    """
    Random-effect posterior expected loss rho(y) = E[L(theta, y) | y] for many observations

    Parameters
    ---
    prior : Prior
        proper prior of theta
    lik : NormalLocation
    loss : Loss
    ys : array-like of observations
    spacing : positive real number
        quadrature spacing for the prior, defaults to prior.scale / 100

    Returns
    ---
    array : rho at each observation
    """
    if not isinstance(lik, NormalLocation):
        raise UnsupportedCombinationError("posterior loss curves are formed for the normal location likelihood")
    if not prior.proper:
        raise ConfigurationError("posterior loss curves need a proper prior; fit one with ebayes_fit")
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    points = discretize(prior, spacing)
    log_masses = points.log_masses
    block = max(1, BLOCK_CELLS // len(points.points))
    result = np.empty(len(ys))
    for start in range(0, len(ys), block):
        chunk = ys[start:start + block, None]
        log_weight = lik.log_density(chunk, points.points[None, :]) + log_masses[None, :]
        log_weight -= log_weight.max(axis=1, keepdims=True)
        weight = np.exp(log_weight)
        values = loss.values(points.points[None, :], chunk, points.is_atom[None, :])
        result[start:start + block] = (weight * values).sum(axis=1) / weight.sum(axis=1)
    return result
