import logging
import re
import time
from concurrent.futures import ProcessPoolExecutor

import attr
import numpy as np
import pandas as pd
from scipy import optimize, special, stats

from sabayes.model.distributions import Flat, Laplace, MeanAndVariance, ScaledInvChiSq, discretize
from sabayes.model.errors import (
    ConfigurationError, DegenerateRuleError, DomainError, FitError, IngestError, NumericError, PreconditionError,
    UnsupportedCombinationError)
from sabayes.model.loss import Directional
from sabayes.model.multiplicity import bh_procedure
from sabayes.model.numerics import Grid, t_quantile
from sabayes.model.posterior import normalized_posterior
from sabayes.model.risk import RiskReport, calibrate_parameter
from sabayes.model.selection import (
    CHI_SQUARE_NODES, SelectionRule, StatThreshold, WholeSpace, moderated_t_selection_probability,
    moderated_t_statistic)

log = logging.getLogger(__name__)

DEFAULT_REPLICATES = 4
DEFAULT_DF = 3.0
DEFAULT_LAPLACE_RATE = 8.5
MIN_FIT_RECORDS = 10
VARIANCE_NODES = 121
MARGINAL_NODES = 241
DOUBLING_TOLERANCE = 1e-4
NODES_PER_SCALE = 100
SELECTION_REACH = 40.0
SELECTION_NODES = 4000
SURFACE_REACH = 20.0
SURFACE_NODES = 401
EFFECT_REACH = 25.0
WHOLE_SPACE_SLACK = 1e-3
BLOCK_CELLS = 1 << 22
REQUIRED_COLUMNS = ("id", "ybar", "s2")
SCHEMES = ("nested", "marginal")


def _positive(instance, attribute, value):
    if not value > 0:
        raise DomainError("{} must be positive, got {}".format(attribute.name, value))


def _at_least(bound):
    def check(instance, attribute, value):
        if not value >= bound:
            raise DomainError("{} must be at least {}, got {}".format(attribute.name, bound, value))
    return check


def _finite(instance, attribute, value):
    if not np.isfinite(value):
        raise DomainError("{} must be finite, got {}".format(attribute.name, value))


@attr.s(frozen=True)
class GeneRecord:
    """
    Summary statistics of one gene: the mean of n log2 ratios and their sample variance on df degrees of freedom
    """
    id = attr.ib(converter=str)
    ybar = attr.ib(converter=float, validator=_finite)
    s2 = attr.ib(converter=float, validator=_at_least(0))
    n = attr.ib(converter=int, default=DEFAULT_REPLICATES, validator=_at_least(2))
    df = attr.ib(converter=float, default=DEFAULT_DF, validator=_at_least(1))

    def to_dict(self):
        return attr.asdict(self)


@attr.s(frozen=True, eq=False)
class GeneTable:
    """
    Column view of many gene records, accepted wherever a single record is
    """
    ids = attr.ib(converter=np.asarray)
    ybar = attr.ib(converter=lambda v: np.asarray(v, dtype=float))
    s2 = attr.ib(converter=lambda v: np.asarray(v, dtype=float))
    n = attr.ib(converter=lambda v: np.asarray(v, dtype=float))
    df = attr.ib(converter=lambda v: np.asarray(v, dtype=float))

    @classmethod
    def from_records(cls, records):
        records = list(records)
        return cls([r.id for r in records], [r.ybar for r in records], [r.s2 for r in records],
                   [r.n for r in records], [r.df for r in records])

    def __len__(self):
        return len(self.ybar)

    def record(self, index):
        return GeneRecord(self.ids[index], self.ybar[index], self.s2[index], int(self.n[index]), self.df[index])

    def records(self):
        return [self.record(i) for i in range(len(self))]

    def find(self, gene_id):
        matches = np.flatnonzero(self.ids == str(gene_id))
        if len(matches) == 0:
            raise ConfigurationError("no gene with id {}".format(gene_id))
        return self.record(matches[0])

    def to_frame(self):
        return pd.DataFrame({ "id": self.ids, "ybar": self.ybar, "s2": self.s2, "n": self.n.astype(int),
                              "df": self.df })


def as_table(records):
    if isinstance(records, GeneTable):
        return records
    if isinstance(records, GeneRecord):
        return GeneTable.from_records([records])
    return GeneTable.from_records(records)


@attr.s(frozen=True)
class EBayesFit:
    """
    Empirical Bayes hyperparameters: sigma^2 ~ nu0 * s0sq / chi^2_{nu0} and mu ~ Laplace(laplace_rate)
    """
    nu0 = attr.ib(converter=float, validator=_positive)
    s0sq = attr.ib(converter=float, validator=_positive)
    laplace_rate = attr.ib(converter=float, default=DEFAULT_LAPLACE_RATE, validator=_positive)
    source = attr.ib(default="override", eq=False)

    def variance_prior(self):
        return ScaledInvChiSq(self.nu0, self.s0sq)

    def effect_prior(self):
        return Laplace(self.laplace_rate)

    def moderated_variance(self, s2, df):
        return (self.nu0 * self.s0sq + df * np.asarray(s2, dtype=float)) / (self.nu0 + df)

    def to_dict(self):
        return { "nu0": self.nu0, "s0sq": self.s0sq, "laplace_rate": self.laplace_rate, "source": self.source }


def _error_line(error):
    match = re.search(r"line (\d+)", str(error))
    return int(match.group(1)) if match else None


def ingest(path, with_rejected=False):
    """
    Reads a gene summary CSV with header id,ybar,s2 and optional n,df columns (defaults 4 and 3)

    Parameters
    ---
    path : file path or buffer
    with_rejected : also return the rows left out for a negative variance

    Returns
    ---
    list of GeneRecord, or (list of GeneRecord, list of dict) with the rejected rows as
        { "line", "id", "reason" }
    """
    try:
        frame = pd.read_csv(path, dtype={ "id": str }, skipinitialspace=True)
    except pd.errors.EmptyDataError as error:
        raise IngestError("gene summary file {} is empty".format(path), line=1) from error
    except pd.errors.ParserError as error:
        raise IngestError("malformed gene summary file {}: {}".format(path, error), line=_error_line(error)) from error
    frame.columns = [str(column).strip() for column in frame.columns]
    missing = [column for column in REQUIRED_COLUMNS if column not in frame.columns]
    if missing:
        raise IngestError("gene summary file {} lacks the columns {}".format(path, missing), line=1)

    defaults = { "n": DEFAULT_REPLICATES, "df": DEFAULT_DF }
    for column, default in defaults.items():
        if column not in frame.columns:
            frame[column] = default
        frame[column] = frame[column].fillna(default)
    numbers = frame[["ybar", "s2", "n", "df"]].apply(pd.to_numeric, errors="coerce")
    bad = numbers.isna().any(axis=1) | frame["id"].isna() | ~np.isfinite(numbers["ybar"].fillna(0))
    if bad.any():
        position = int(np.flatnonzero(bad.to_numpy())[0])
        raise IngestError("row {} of {} has a missing or non-numeric field".format(position + 2, path),
                          line=position + 2)

    records, rejected = [], []
    for position, (gene_id, ybar, s2, n, df) in enumerate(zip(
            frame["id"], numbers["ybar"], numbers["s2"], numbers["n"], numbers["df"])):
        line = position + 2
        if s2 < 0:
            rejected.append({ "line": line, "id": gene_id, "reason": "negative sample variance {}".format(s2) })
            continue
        try:
            records.append(GeneRecord(gene_id, ybar, s2, n, df))
        except DomainError as error:
            raise IngestError("row {} of {}: {}".format(line, path, error.detail), line=line) from error
    for row in rejected:
        log.warning("rejected line %d (gene %s): %s", row["line"], row["id"], row["reason"])
    log.info("ingested %d gene records from %s (%d rejected)", len(records), path, len(rejected))
    if with_rejected:
        return records, rejected
    return records


def fit_variance_prior(records, override=None, laplace_rate=DEFAULT_LAPLACE_RATE):
    """
    Scaled inverse chi-square prior of the gene variances

    Without an override, nu0 and s0sq match the mean and variance of log s^2 (digamma and trigamma
    corrected for the df of each gene) to those of a chi-square scaled by that prior: a 1-D search
    over nu0, then s0sq in closed form.

    Parameters
    ---
    records : list of GeneRecord or GeneTable
    override : (nu0, s0sq), passed through when given
    laplace_rate : rate of the Laplace effect prior carried by the fit

    Returns
    ---
    EBayesFit
    """
    if override is not None:
        nu0, s0sq = override
        return EBayesFit(nu0, s0sq, laplace_rate, source="override")
    table = as_table(records)
    positive = table.s2 > 0
    if positive.sum() < MIN_FIT_RECORDS:
        raise FitError("fitting the variance prior needs at least {} records with positive variance, got {}".format(
            MIN_FIT_RECORDS, int(positive.sum())))
    if not positive.all():
        log.warning("%d records with zero variance are left out of the variance prior fit", int((~positive).sum()))
    s2, df = table.s2[positive], table.df[positive]

    e = np.log(s2) - special.digamma(df / 2) + np.log(df / 2)
    center = float(np.mean(e))
    excess = float(np.var(e, ddof=1) - np.mean(special.polygamma(1, df / 2)))
    if not excess > 1e-8:
        raise FitError("the sample variances are too homogeneous to fit nu0 (log-variance excess {:.3g}); "
                       "pass override=(nu0, s0sq)".format(excess))
    half = optimize.brentq(lambda x: special.polygamma(1, x) - excess, 1e-8, 1e8, xtol=1e-12)
    nu0 = 2 * half
    s0sq = float(np.exp(center + special.digamma(half) - np.log(half)))
    log.info("variance prior fit on %d records: nu0 = %.4g, s0sq = %.4g", len(s2), nu0, s0sq)
    return EBayesFit(nu0, s0sq, laplace_rate, source="moment_match")


def moderated_t(record, fit):
    """
    Parameters
    ---
    record : GeneRecord or GeneTable
    fit : EBayesFit

    Returns
    ---
    (real, real) or (array, array) : t = ybar / (s_tilde / sqrt(n)) and its two-sided p-value on nu0 + df
        degrees of freedom
    """
    t = moderated_t_statistic(record.ybar, record.s2, record.n, record.df, fit.nu0, fit.s0sq)
    p = np.minimum(2 * special.stdtr(fit.nu0 + np.asarray(record.df, dtype=float), -np.abs(t)), 1.0)
    if np.ndim(t) == 0:
        return float(t), float(p)
    return t, p


def _log_quadrature(distribution, size):
    """
    Normalized quadrature over log x for a positive random variable
    """
    grid = Grid(np.log(distribution.ppf(1e-12)), np.log(distribution.isf(1e-12)), size)
    x = np.exp(grid.nodes)
    weights = grid.weights * distribution.pdf(x) * x
    return x, weights / weights.sum()


def _moderated_rule(rule, fit):
    if not (isinstance(rule, StatThreshold) and rule.stat == "moderated_t"):
        raise UnsupportedCombinationError("expected a moderated t threshold rule, got {}".format(rule.to_dict()))
    return rule if rule.fit is not None else attr.evolve(rule, fit=fit)


def _t_tails(rule, nu, shift):
    if rule.direction == "abs_greater":
        return special.stdtr(nu, -rule.s - shift) + special.stdtr(nu, shift - rule.s)
    if rule.direction == "greater":
        return special.stdtr(nu, shift - rule.s)
    return special.stdtr(nu, rule.s - shift)


def _nested_probability(rule, fit, mu, n, df, refine):
    variances, weights = _log_quadrature(fit.variance_prior().distribution, (VARIANCE_NODES - 1) * refine + 1)
    chi_nodes = (CHI_SQUARE_NODES - 1) * refine + 1
    lik = MeanAndVariance(n, df)
    block = max(1, BLOCK_CELLS // (len(variances) * chi_nodes))
    out = np.empty(len(mu))
    for start in range(0, len(mu), block):
        chunk = mu[start:start + block, None]
        inner = moderated_t_selection_probability(rule, lik, chunk, variances[None, :], chi_nodes)
        out[start:start + block] = inner @ weights
    return out


def _marginal_probability(rule, fit, mu, n, df, refine):
    ratios, weights = _log_quadrature(stats.f(df, fit.nu0), (MARGINAL_NODES - 1) * refine + 1)
    scales = np.sqrt(fit.moderated_variance(fit.s0sq * ratios, df) / n)
    block = max(1, BLOCK_CELLS // len(ratios))
    out = np.empty(len(mu))
    for start in range(0, len(mu), block):
        shift = mu[start:start + block, None] / scales[None, :]
        out[start:start + block] = _t_tails(rule, fit.nu0 + df, shift) @ weights
    return out


def selection_prob_mu(rule, fit, mu, n=DEFAULT_REPLICATES, df=DEFAULT_DF, scheme="nested", check=False):
    """
    Pr(rule selects the gene | mu) with sigma^2 integrated against the fitted variance prior

    Parameters
    ---
    rule : StatThreshold on the moderated t statistic
    fit : EBayesFit
    mu : real number or array
    n, df : replicates and variance degrees of freedom of the gene
    scheme : "nested" integrates sigma^2 on a log grid against the variance prior, then s^2 against
        sigma^2 chi^2_df / df, with the normal tails of ybar in closed form; "marginal" integrates
        s^2 / s0sq against its F(df, nu0) law, with the t tails of ybar given s^2 in closed form
    check : recompute with twice the nodes and fail on a change above 1e-4

    Returns
    ---
    probability or array
    """
    if scheme not in SCHEMES:
        raise ConfigurationError("unknown quadrature scheme {}, expected one of {}".format(scheme, SCHEMES))
    rule = _moderated_rule(rule, fit)
    mu = np.asarray(mu, dtype=float)
    method = _nested_probability if scheme == "nested" else _marginal_probability
    value = np.clip(method(rule, fit, mu.ravel(), n, df, 1), 0.0, 1.0)
    if check:
        doubled = np.clip(method(rule, fit, mu.ravel(), n, df, 2), 0.0, 1.0)
        change = float(np.max(np.abs(doubled - value)))
        if change > DOUBLING_TOLERANCE:
            raise NumericError("selection probability moves by {:.3g} when the quadrature nodes are doubled".format(
                change), location=float(mu.ravel()[np.argmax(np.abs(doubled - value))]))
        log.debug("selection probability doubling change %.2e", change)
    value = value.reshape(mu.shape)
    return float(value) if value.ndim == 0 else value


class _SelectionCurve:
    """
    log Pr(S | mu) interpolated from nodes concentrated where it varies; the dense part is computed once
    """

    def __init__(self, rule, fit, record, scale, scheme):
        self.rule, self.fit, self.record, self.scheme = rule, fit, record, scheme
        self.reach = SELECTION_REACH * scale
        lo, hi = min(record.ybar, 0.0) - self.reach, max(record.ybar, 0.0) + self.reach
        self.near = Grid.aligned(lo, hi, max(scale / 10, (hi - lo) / SELECTION_NODES)).nodes
        self.values = self._log_probability(self.near)

    def _log_probability(self, nodes):
        value = selection_prob_mu(self.rule, self.fit, nodes, self.record.n, self.record.df, self.scheme)
        return np.log(np.maximum(value, 1e-300))

    def __call__(self, mu):
        outer, edge = [], self.reach
        while self.near[0] - edge > mu.min() or self.near[-1] + edge < mu.max():
            outer.extend([self.near[0] - edge, self.near[-1] + edge])
            edge *= 2
        outer = np.array(sorted(outer + [self.near[0] - edge, self.near[-1] + edge]))
        nodes = np.concatenate([outer[outer < self.near[0]], self.near, outer[outer > self.near[-1]]])
        values = np.concatenate([self._log_probability(outer[outer < self.near[0]]), self.values,
                                 self._log_probability(outer[outer > self.near[-1]])])
        return np.interp(mu, nodes, values)


def gene_posterior(record, fit, rule=None, effect_prior=None, scheme="nested"):
    """
    Posterior of the mean log ratio mu of one gene, sigma^2 integrated against the variance prior

    Parameters
    ---
    record : GeneRecord
    fit : EBayesFit
    rule : SelectionRule, optional
        the rule that selected the gene; with the flat prior mu is a fixed effect and the kernel is
        divided by Pr(S | mu), with a Laplace prior mu is a random effect and the rule only has to hold
    effect_prior : Flat (default) or Laplace
    scheme : quadrature scheme of Pr(S | mu), see selection_prob_mu

    Returns
    ---
    PosteriorGrid
    """
    effect_prior = Flat() if effect_prior is None else effect_prior
    if not isinstance(effect_prior, (Flat, Laplace)):
        raise UnsupportedCombinationError("gene posteriors take a flat or Laplace effect prior, got {}".format(
            type(effect_prior).__name__))
    if rule is not None and not rule.contains(record):
        raise PreconditionError("gene {} is not selected by {}".format(record.id, rule.to_dict()))

    nu = fit.nu0 + record.df
    scale = float(np.sqrt(fit.moderated_variance(record.s2, record.df) / record.n))
    adjusted = rule is not None and not effect_prior.proper and not isinstance(rule, WholeSpace)
    if adjusted:
        selection = _SelectionCurve(_moderated_rule(rule, fit), fit, record, scale, scheme)

    def log_kernel(mu):
        z = (mu - record.ybar) / scale
        value = effect_prior.log_density(mu) - (nu + 1) / 2 * np.log1p(z * z / nu)
        if adjusted:
            value = value - selection(mu)
        return value

    spacing = min(scale, effect_prior.scale) / NODES_PER_SCALE
    post = normalized_posterior(log_kernel, record.ybar, scale, spacing)
    log.debug("gene %s posterior on %r (adjusted: %s)", record.id, post.grid, adjusted)
    return attr.evolve(post, diagnostics=dict(post.diagnostics, gene=record.id, adjusted=adjusted,
                                              effect_prior=effect_prior.to_dict()))


def _effect_points(fit, scale):
    prior = fit.effect_prior()
    reach = EFFECT_REACH * prior.scale
    return discretize(prior, spacing=min(prior.scale, scale) / 10, window=(-reach, reach))


def _rho_block(task):
    ybar, scale, nu, points, masses, is_atom = task
    z = (ybar[:, None] - points[None, :]) / scale[:, None]
    log_weight = np.log(masses)[None, :] - (nu[:, None] + 1) / 2 * np.log1p(z * z / nu[:, None])
    log_weight -= log_weight.max(axis=1, keepdims=True)
    weight = np.exp(log_weight)
    wrong = Directional().values(points[None, :], ybar[:, None], is_atom[None, :])
    return (weight * wrong).sum(axis=1) / weight.sum(axis=1)


def _map(function, tasks, workers):
    if workers and workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(function, tasks))
    return [function(task) for task in tasks]


def gene_rho(records, fit, workers=1):
    """
    Posterior probability that sign mu differs from sign ybar under the fitted Laplace and variance priors

    Returns
    ---
    real number for one GeneRecord, otherwise an array in record order
    """
    table = as_table(records)
    scale = np.sqrt(fit.moderated_variance(table.s2, table.df) / table.n)
    nu = fit.nu0 + table.df
    points = _effect_points(fit, float(scale.min()))
    block = max(1, BLOCK_CELLS // len(points.points))
    tasks = [(table.ybar[i:i + block], scale[i:i + block], nu[i:i + block], points.points, points.masses,
              points.is_atom) for i in range(0, len(table), block)]
    rho = np.concatenate(_map(_rho_block, tasks, workers)) if tasks else np.empty(0)
    if isinstance(records, GeneRecord):
        return float(rho[0])
    return rho


@attr.s(frozen=True)
class GeneLossThreshold(SelectionRule):
    """
    Select a gene when its directional posterior loss gene_rho is at most s
    """
    s = attr.ib(converter=float)
    fit = attr.ib(default=None, eq=False)

    def with_cutoff(self, s):
        return attr.evolve(self, s=s)

    def rho(self, observation):
        if self.fit is None:
            raise ConfigurationError("a gene loss threshold needs the empirical Bayes fit")
        return gene_rho(observation, self.fit)

    def contains(self, observation):
        inside = np.asarray(self.rho(observation)) <= self.s
        return bool(inside) if inside.ndim == 0 else inside

    def y_intervals(self):
        raise UnsupportedCombinationError("a gene loss threshold is not a region of a scalar observation")

    def to_dict(self):
        return { "type": "gene_loss_threshold", "loss": "directional", "s": self.s }


@attr.s(frozen=True, eq=False)
class RiskSurface:
    """
    Directional risk ingredients under the fitted priors

    The sample variance is integrated through s^2 / s0sq ~ F(df, nu0) on a log grid; given s^2 the
    standardized mean u = ybar / (s_tilde / sqrt(n)) is mu / (s_tilde / sqrt(n)) plus a t variate on nu0 + df
    degrees of freedom. rho holds the directional posterior loss on (variance node, u >= 0).
    """
    fit = attr.ib()
    n = attr.ib()
    df = attr.ib()
    weights = attr.ib()
    scales = attr.ib()
    points = attr.ib()
    u = attr.ib()
    rho = attr.ib()

    @classmethod
    def build(cls, fit, n=DEFAULT_REPLICATES, df=DEFAULT_DF):
        start = time.perf_counter()
        ratios, weights = _log_quadrature(stats.f(df, fit.nu0), VARIANCE_NODES)
        scales = np.sqrt(fit.moderated_variance(fit.s0sq * ratios, df) / n)
        points = _effect_points(fit, float(scales.min()))
        nu = fit.nu0 + df
        u = Grid(0.0, SURFACE_REACH, SURFACE_NODES).nodes
        wrong = Directional().values(points.points, 1.0, points.is_atom) * points.masses
        rho = np.empty((len(scales), len(u)))
        for k, scale in enumerate(scales):
            z = u[:, None] - points.points[None, :] / scale
            kernel = (1 + z * z / nu) ** (-(nu + 1) / 2)
            rho[k] = (kernel @ wrong) / (kernel @ points.masses)
        log.info("risk surface %d x %d built in %.1fs", len(scales), len(u), time.perf_counter() - start)
        return cls(fit, n, df, weights, scales, points, u, rho)

    def cutoffs_for(self, s):
        """
        Per variance node, the u beyond which rho stays at most s (inf when it never gets there)
        """
        inside = self.rho <= s
        first = np.argmax(inside, axis=1)
        cutoffs = np.full(len(self.scales), np.inf)
        for k in np.flatnonzero(inside.any(axis=1)):
            i = first[k]
            if i == 0:
                cutoffs[k] = 0.0
                continue
            r0, r1 = self.rho[k, i - 1], self.rho[k, i]
            cutoffs[k] = self.u[i - 1] + (r0 - s) / (r0 - r1) * (self.u[i] - self.u[i - 1])
        return cutoffs

    def risk(self, cutoffs):
        """
        Parameters
        ---
        cutoffs : per variance node, the region |u| > cutoff

        Returns
        ---
        (real, real, real) : the risk, Pr(S) and Pr(S and a wrong sign)
        """
        nu = self.fit.nu0 + self.df
        shift = self.points.points[None, :] / self.scales[:, None]
        c = np.asarray(cutoffs, dtype=float)[:, None]
        upper = special.stdtr(nu, shift - c)
        lower = special.stdtr(nu, -c - shift)
        masses = self.points.masses
        on_positive = Directional().values(self.points.points, 1.0, self.points.is_atom) * masses
        on_negative = Directional().values(self.points.points, -1.0, self.points.is_atom) * masses
        total = masses.sum()
        selected = float(self.weights @ ((upper + lower) @ masses)) / total
        false = float(self.weights @ (upper @ on_positive + lower @ on_negative)) / total
        return (false / selected if selected > 0 else 0.0), selected, false


def _surface_cutoffs(rule, surface, fit):
    if isinstance(rule, WholeSpace):
        return np.zeros(len(surface.scales))
    if isinstance(rule, GeneLossThreshold):
        return surface.cutoffs_for(rule.s)
    rule = _moderated_rule(rule, fit)
    if rule.direction != "abs_greater":
        raise UnsupportedCombinationError("gene risk is formed for two-sided moderated t rules")
    return np.full(len(surface.scales), rule.s)


def gene_risk(rule, fit, n=DEFAULT_REPLICATES, df=DEFAULT_DF, m=1, surface=None):
    """
    saBayes directional risk of a gene selection rule: the average of gene_rho over the marginal of
    (ybar, s^2) restricted to the rule region

    Parameters
    ---
    rule : moderated t StatThreshold, GeneLossThreshold or WholeSpace
    fit : EBayesFit
    n, df : replicates and variance degrees of freedom shared by the genes
    m : number of genes, scaling the expected discoveries
    surface : RiskSurface to reuse across rules

    Returns
    ---
    RiskReport
    """
    surface = surface or RiskSurface.build(fit, n, df)
    risk, selected, false = surface.risk(_surface_cutoffs(rule, surface, fit))
    if selected <= 0:
        raise DegenerateRuleError("rule {} selects with probability 0".format(rule.to_dict()))
    log.info("gene risk of %s: %.5g (Pr(S) = %.5g)", rule.to_dict(), risk, selected)
    return RiskReport(rule, risk, selected, m * selected, Directional(), m * false, "ratio")


@attr.s(frozen=True)
class _SurfaceRisk:
    surface = attr.ib(eq=False)
    family = attr.ib()

    def __call__(self, parameter):
        if self.family == "moderated_t":
            cutoffs = np.full(len(self.surface.scales), parameter)
        else:
            cutoffs = self.surface.cutoffs_for(parameter)
        return self.surface.risk(cutoffs)[0]


def calibrate_gene_rule(family, fit, q, n=DEFAULT_REPLICATES, df=DEFAULT_DF, bracket=None, points=50,
                        tol=1e-4, workers=1):
    """
    Gene selection rule whose directional saBayes risk equals q

    Parameters
    ---
    family : "moderated_t" (|t| > a) or "gene_loss_threshold" (rho <= s)
    bracket : search range, defaults to [0, 10] for a and [1e-3, 0.5] for s

    Returns
    ---
    SelectionRule : the calibrated rule; the whole space when it already meets the target
    """
    if family not in ("moderated_t", "gene_loss_threshold"):
        raise ConfigurationError("unknown gene rule family {}".format(family))
    surface = RiskSurface.build(fit, n, df)
    whole = surface.risk(np.zeros(len(surface.scales)))[0]
    if abs(whole - q) <= WHOLE_SPACE_SLACK:
        return WholeSpace()
    risk_of = _SurfaceRisk(surface, family)
    if family == "moderated_t":
        lo, hi = bracket or (0.0, 10.0)
        a, _, _ = calibrate_parameter(risk_of, lo, hi, q, points, tol, workers)
        return StatThreshold("moderated_t", a, fit=fit)
    lo, hi = bracket or (1e-3, 0.5)
    s, _, _ = calibrate_parameter(risk_of, lo, hi, q, points, tol * 1e-2, workers)
    return GeneLossThreshold(s, fit)


@attr.s(frozen=True)
class DiscoveryCount:
    count = attr.ib()
    selected = attr.ib(converter=tuple, repr=False)
    bh = attr.ib(default=None)
    bh_cutoff = attr.ib(default=None)

    def to_dict(self):
        document = { "count": self.count, "selected": list(self.selected) }
        if self.bh is not None:
            document.update(bh=self.bh.to_dict(), bh_cutoff=self.bh_cutoff)
        return document


def count_discoveries(records, rule, fit, bh_q=None, workers=1):
    """
    Number of genes in the rule region, and optionally the BH discoveries on the moderated t p-values

    Returns
    ---
    DiscoveryCount : bh_cutoff is the smallest |t| among the BH discoveries
    """
    table = as_table(records)
    if isinstance(rule, GeneLossThreshold):
        selected = gene_rho(table, rule.fit or fit, workers) <= rule.s
    elif isinstance(rule, StatThreshold) and rule.stat == "moderated_t":
        selected = np.asarray(_moderated_rule(rule, fit).contains(table))
    else:
        selected = np.asarray(rule.contains(table.ybar))
    indices = np.flatnonzero(selected)
    bh, cutoff = None, None
    if bh_q is not None:
        t, p = moderated_t(table, fit)
        bh = bh_procedure(p, bh_q)
        cutoff = float(np.abs(t[list(bh.rejected)]).min()) if bh.r > 0 else None
    log.info("%s selects %d of %d genes", rule.to_dict(), len(indices), len(table))
    return DiscoveryCount(len(indices), indices.tolist(), bh, cutoff)


@attr.s(frozen=True)
class RawTReport:
    """
    BH on ordinary t statistics with df degrees of freedom
    """
    result = attr.ib()
    max_abs_t = attr.ib()
    critical_t = attr.ib()
    df = attr.ib()

    def to_dict(self):
        return { "bh": self.result.to_dict(), "max_abs_t": self.max_abs_t, "critical_t": self.critical_t,
                 "df": self.df }


def raw_t_bh(records, q):
    """
    critical_t is F_df^{-1}(1 - q / (2 m)), the |t| the most extreme gene needs for any BH discovery
    """
    table = as_table(records)
    dfs = np.unique(table.df)
    if len(dfs) != 1:
        raise ConfigurationError("raw t comparison needs a common df, got {}".format(dfs.tolist()))
    with np.errstate(divide="ignore"):
        t = table.ybar / np.sqrt(table.s2 / table.n)
    p = np.minimum(2 * special.stdtr(table.df, -np.abs(t)), 1.0)
    result = bh_procedure(np.nan_to_num(p, nan=1.0), q)
    critical = t_quantile(1 - q / (2 * len(table)), float(dfs[0]))
    finite = np.abs(t[np.isfinite(t)])
    return RawTReport(result, float(finite.max()) if len(finite) else float("nan"), critical, float(dfs[0]))


@attr.s(frozen=True)
class DirectionalFdrEstimate:
    expected_false = attr.ib()
    R = attr.ib()
    estimate = attr.ib()

    def to_dict(self):
        return attr.asdict(self)


def conservative_directional_fdr(records, a, fit):
    """
    m (1 - F_{nu0 + df}(a)) / R, the directional false discovery rate bound of the rule |t| > a
    """
    table = as_table(records)
    t, _ = moderated_t(table, fit)
    R = int(np.sum(np.abs(t) > a))
    if R == 0:
        raise DegenerateRuleError("no gene has |t| > {}".format(a))
    expected = float(np.sum(special.stdtr(fit.nu0 + table.df, -a)))
    return DirectionalFdrEstimate(expected, R, expected / R)


def fit_laplace_rate(records, fit, bracket=(0.5, 200.0)):
    """
    Maximum marginal likelihood rate of the Laplace effect prior, sigma^2 integrated out

    Returns
    ---
    EBayesFit : fit with laplace_rate replaced
    """
    table = as_table(records)
    scale = np.sqrt(fit.moderated_variance(table.s2, table.df) / table.n)
    nu = fit.nu0 + table.df
    reach = float(np.max(np.abs(table.ybar)) + 10 * scale.max())
    grid = Grid.aligned(-reach, reach, max(scale.min() / 5, 2 * reach / 1500))
    norm = special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2) - 0.5 * np.log(nu * np.pi) - np.log(scale)
    block = max(1, BLOCK_CELLS // grid.n)

    def negative_log_likelihood(log_rate):
        rate = np.exp(log_rate)
        log_prior = np.log(grid.weights) - rate * np.abs(grid.nodes)
        log_prior -= special.logsumexp(log_prior)
        total = 0.0
        for start in range(0, len(table), block):
            z = (table.ybar[start:start + block, None] - grid.nodes[None, :]) / scale[start:start + block, None]
            nus = nu[start:start + block, None]
            log_t = norm[start:start + block, None] - (nus + 1) / 2 * np.log1p(z * z / nus)
            total += special.logsumexp(log_t + log_prior[None, :], axis=1).sum()
        return -total

    lo, hi = np.log(bracket[0]), np.log(bracket[1])
    result = optimize.minimize_scalar(negative_log_likelihood, bounds=(lo, hi), method="bounded",
                                      options={ "xatol": 1e-4 })
    if not result.success:
        raise FitError("Laplace rate search did not converge: {}".format(result.message))
    rate = float(np.exp(result.x))
    if min(result.x - lo, hi - result.x) < 1e-3:
        log.warning("Laplace rate %.4g is at the edge of the search range %s", rate, bracket)
    log.info("Laplace effect prior rate %.4g", rate)
    return attr.evolve(fit, laplace_rate=rate, source=fit.source + "+laplace_mle")


def simulate_records(fit, m, rng, n=DEFAULT_REPLICATES, df=DEFAULT_DF, effect_prior=None):
    """
    Gene records drawn from the fitted variance prior, with mu = 0 or drawn from effect_prior

    Returns
    ---
    (GeneTable, array) : the records and their mu
    """
    generator = rng.generator()
    sigma2 = fit.variance_prior().sample(generator, m)
    mu = np.zeros(m) if effect_prior is None else effect_prior.sample(generator, m)
    ybar, s2 = MeanAndVariance(n, df).sample(mu, sigma2, generator)
    ids = np.array(["sim{}".format(i) for i in range(m)])
    return GeneTable(ids, ybar, s2, np.full(m, n), np.full(m, df)), mu


def gene_report(records, fit, rules=None, workers=1):
    """
    Per-gene table: moderated t, its p-value, the directional loss and one selected_<name> column per rule
    """
    table = as_table(records)
    t, p = moderated_t(table, fit)
    rho = gene_rho(table, fit, workers)
    frame = table.to_frame()
    frame["t"], frame["p"], frame["rho"] = t, p, rho
    for name, rule in (rules or {}).items():
        if isinstance(rule, GeneLossThreshold):
            frame["selected_" + name] = rho <= rule.s
        else:
            frame["selected_" + name] = np.asarray(_moderated_rule(rule, fit).contains(table))
    return frame
