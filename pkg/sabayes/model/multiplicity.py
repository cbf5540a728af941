import logging

import attr
import numpy as np
from statsmodels.stats.multitest import multipletests

from sabayes.model.errors import DomainError, PreconditionError
from sabayes.model.numerics import normal_cdf, normal_quantile

log = logging.getLogger(__name__)


@attr.s(frozen=True)
class TestingResult:
    """
    Outcome of a step-up multiple test

    rejected holds the indices (into the input order) of the rejected hypotheses, ascending.
    """
    __test__ = False

    m = attr.ib()
    rejected = attr.ib(converter=tuple)
    r = attr.ib()
    threshold_p = attr.ib()
    q = attr.ib()

    def to_dict(self):
        return { "m": self.m, "rejected": list(self.rejected), "r": self.r, "threshold_p": self.threshold_p,
                 "q": self.q }


@attr.s(frozen=True)
class CoverageLedger:
    """
    R selected statements of which V are false; V is None when the truth is unknown
    """
    R = attr.ib()
    V = attr.ib(default=None)

    @V.validator
    def _check(self, attribute, value):
        if value is not None and not 0 <= value <= self.R:
            raise DomainError("V must lie in [0, R], got V={} R={}".format(value, self.R))

    @property
    def FCP(self):
        if self.V is None:
            return None
        return self.V / max(1, self.R)

    def to_dict(self):
        return { "R": self.R, "V": self.V, "FCP": self.FCP }


def bh_procedure(pvalues, q):
    """
    Benjamini-Hochberg step-up procedure

    Parameters
    ---
    pvalues : array-like of probabilities
    q : nominal FDR level

    Returns
    ---
    TestingResult : rejects the k smallest p-values, k = max{i : p_(i) <= q i / m}; ties at the cutoff
        are all rejected
    """
    if not 0 < q <= 1:
        raise DomainError("q must lie in (0, 1], got {}".format(q))
    p = np.asarray(pvalues, dtype=float).ravel()
    if len(p) == 0:
        return TestingResult(0, (), 0, 0.0, q)
    if np.any(~(p >= 0) | ~(p <= 1)):
        raise DomainError("p-values must lie in [0, 1]")
    reject = multipletests(p, alpha=q, method="fdr_bh")[0]
    rejected = np.flatnonzero(reject)
    threshold = float(p[rejected].max()) if len(rejected) > 0 else 0.0
    log.info("BH at q=%.4g rejects %d of %d (p-value cutoff %.6g)", q, len(rejected), len(p), threshold)
    return TestingResult(len(p), rejected.tolist(), len(rejected), threshold, q)


def two_sided_pvalues(y, sigma=1.0):
    """
    2 (1 - Phi(|y| / sigma))
    """
    return 2 * normal_cdf(-np.abs(np.asarray(y, dtype=float)) / sigma)


def fcr_adjusted_cis(selected, q, m):
    """
    Marginal 1 - R q / m intervals for the R selected parameters

    Parameters
    ---
    selected : list of (index, y, sigma)
    q : FCR level
    m : number of parameters the selection was made from

    Returns
    ---
    list of (index, lo, hi)
    """
    R = len(selected)
    if R == 0:
        raise PreconditionError("no parameters were selected")
    tail = R * q / m
    if tail >= 1:
        raise DomainError("degenerate interval level: R q / m = {:.6g} is not below 1".format(tail))
    z = normal_quantile(1 - tail / 2)
    return [(index, y - z * sigma, y + z * sigma) for index, y, sigma in selected]


def directional_calls(y, threshold, theta=None):
    """
    Declares sign(y) for |y| > threshold

    Returns
    ---
    (array, CoverageLedger) : calls in {-1, 0, 1} per observation and the directional error ledger,
        whose V counts sign(theta) != sign(y) among the calls when theta is given
    """
    y = np.asarray(y, dtype=float)
    calls = np.where(np.abs(y) > threshold, np.sign(y), 0).astype(int)
    selected = calls != 0
    if theta is None:
        return calls, CoverageLedger(int(selected.sum()))
    wrong = np.sign(np.asarray(theta, dtype=float)) != calls
    return calls, CoverageLedger(int(selected.sum()), int((wrong & selected).sum()))


def interval_coverage(lo, hi, theta):
    """
    Ledger of interval statements: V counts the parameters outside their interval
    """
    lo, hi, theta = (np.asarray(v, dtype=float) for v in (lo, hi, theta))
    misses = (theta < lo) | (theta > hi)
    return CoverageLedger(int(len(theta)), int(misses.sum()))
