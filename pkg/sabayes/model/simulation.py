import logging
import time
from concurrent.futures import ProcessPoolExecutor

import attr
import numpy as np
import pandas as pd
from scipy import special, stats

from sabayes.model.distributions import (
    ConditionalPrior, Discrete, Fixed, Flat, Laplace, Mixed, Mixture, NormalLocation, Random, log_interval_mass)
from sabayes.model.errors import ConfigurationError, DomainError, InfeasibleTruncationError
from sabayes.model.multiplicity import (
    bh_procedure, fcr_adjusted_cis, interval_coverage, two_sided_pvalues)
from sabayes.model.posterior import credible_interval_coverage, effect_kind, normal_interval
from sabayes.model.selection import OneSided, TwoSided

log = logging.getLogger(__name__)

PROBE_DRAWS = 1_000_000
MIN_ACCEPTANCE = 1e-6
BATCH = 65536
LAPLACE_RATES = (10.0, 1.0)
RATE_WEIGHTS = (0.9, 0.1)


def _check_non_exchangeable(instance, attribute, value):
    if value is not None and len(value) != instance.m:
        raise ConfigurationError("non_exchangeable lists {} priors for m = {}".format(len(value), instance.m))


@attr.s(frozen=True)
class GenerativeSpec:
    """
    m parameters drawn iid from prior (or from per-index priors) and one observation of each
    """
    m = attr.ib(converter=int)
    kind = attr.ib(converter=effect_kind)
    prior = attr.ib()
    lik = attr.ib(default=NormalLocation(1.0))
    non_exchangeable = attr.ib(default=None, converter=attr.converters.optional(tuple),
                               validator=_check_non_exchangeable, eq=False)

    def prior_of(self, index):
        if self.non_exchangeable is not None:
            return self.non_exchangeable[index]
        return self.prior

    def blocks(self):
        """
        Runs (start, stop, prior) of consecutive indices sharing a prior
        """
        if self.non_exchangeable is None:
            return [(0, self.m, self.prior)]
        runs, start = [], 0
        for i in range(1, self.m + 1):
            if i == self.m or self.non_exchangeable[i] is not self.non_exchangeable[start]:
                runs.append((start, i, self.non_exchangeable[start]))
                start = i
        return runs

    def to_dict(self):
        document = { "m": self.m, "kind": self.kind.to_dict(), "likelihood": self.lik.to_dict() }
        if self.prior is not None:
            document["prior"] = self.prior.to_dict()
        if self.non_exchangeable is not None:
            document["non_exchangeable"] = [{ "count": stop - start, "prior": prior.to_dict() }
                                            for start, stop, prior in self.blocks()]
        return document


def non_exchangeable_blocks(blocks):
    """
    Per-index prior list from (count, prior) blocks
    """
    priors = []
    for count, prior in blocks:
        priors.extend([prior] * int(count))
    return priors


def _draw_theta(kind, prior, generator, size):
    if isinstance(kind, Mixed):
        lambdas = kind.hyperprior.sample(generator, size)
        if kind.conditional.family == "laplace_rate":
            return generator.laplace(0.0, 1 / lambdas)
        return generator.normal(lambdas, np.sqrt(kind.conditional.var))
    return prior.sample(generator, size)


def generate(spec, rng):
    """
    Parameters
    ---
    spec : GenerativeSpec
    rng : RngStream

    Returns
    ---
    (array, array) : the parameters and their observations
    """
    generator = rng.generator()
    theta = np.empty(spec.m)
    for start, stop, prior in spec.blocks():
        theta[start:stop] = _draw_theta(spec.kind, prior, generator, stop - start)
    return theta, spec.lik.sample(theta, generator)


@attr.s(frozen=True, eq=False)
class TruncatedSample:
    theta = attr.ib()
    y = attr.ib()
    draws = attr.ib()

    @property
    def acceptance_rate(self):
        return len(self.y) / self.draws

    def pairs(self):
        return list(zip(self.theta.tolist(), self.y.tolist()))

    def to_frame(self):
        return pd.DataFrame({ "theta": self.theta, "y": self.y })


def _truncated_observations(rule, lik, theta, generator):
    """
    y | theta restricted to the rule's region, one draw per theta

    Equivalent to redrawing y given the same theta until it is selected; the redraw counts that loop
    would have spent are drawn as geometric variables.

    Returns
    ---
    (array, int) : the observations and the total redraw count
    """
    intervals = rule.y_intervals()
    log_masses = np.stack([log_interval_mass(lo, hi, theta, lik.sigma) for lo, hi in intervals])
    log_total = special.logsumexp(log_masses, axis=0)
    shares = np.cumsum(np.exp(log_masses - log_total), axis=0)
    pick = np.minimum((generator.random(len(theta)) > shares).sum(axis=0), len(intervals) - 1)
    bounds = np.asarray(intervals, dtype=float)[pick]
    y = stats.truncnorm.rvs((bounds[:, 0] - theta) / lik.sigma, (bounds[:, 1] - theta) / lik.sigma,
                            loc=theta, scale=lik.sigma, random_state=generator)
    draws = int(generator.geometric(np.clip(np.exp(log_total), MIN_ACCEPTANCE ** 2, 1.0)).sum())
    return np.asarray(y, dtype=float), draws


def sample_truncated(spec, rule, target_index, n, rng):
    """
    Sampler of (theta, y) for one component, conditional on its selection

    random: (theta, y) redrawn together until y is selected; fixed: theta drawn once per realization and
    y redrawn given that theta (drawn from its truncated law under the normal location likelihood);
    mixed: lambda drawn once per realization and (theta, y) redrawn given it.

    Returns
    ---
    TruncatedSample : n accepted pairs and the number of draws spent
    """
    if not 0 <= target_index < spec.m:
        raise DomainError("target_index {} outside [0, {})".format(target_index, spec.m))
    generator = rng.generator()
    prior, kind, lik = spec.prior_of(target_index), spec.kind, spec.lik

    probe_theta = _draw_theta(kind, prior, generator, PROBE_DRAWS)
    rate = float(np.mean(rule.contains(lik.sample(probe_theta, generator))))
    if rate < MIN_ACCEPTANCE:
        raise InfeasibleTruncationError("selection acceptance rate {:.3g} is below {:.0e}".format(
            rate, MIN_ACCEPTANCE), rate=rate)

    draws = 0
    if isinstance(kind, Random):
        theta, y = [], []
        accepted = 0
        while accepted < n:
            t = _draw_theta(kind, prior, generator, BATCH)
            obs = lik.sample(t, generator)
            keep = rule.contains(obs)
            theta.append(t[keep])
            y.append(obs[keep])
            accepted += int(keep.sum())
            draws += BATCH
        return TruncatedSample(np.concatenate(theta)[:n], np.concatenate(y)[:n], draws)

    if isinstance(kind, Fixed) and isinstance(lik, NormalLocation):
        theta = _draw_theta(kind, prior, generator, n)
        y, draws = _truncated_observations(rule, lik, theta, generator)
        return TruncatedSample(theta, y, draws)
    if isinstance(kind, Fixed):
        theta = _draw_theta(kind, prior, generator, n)
        fixed = None
    else:
        fixed = kind.hyperprior.sample(generator, n)
        theta = np.empty(n)
    y = np.empty(n)
    pending = np.arange(n)
    rounds = 0
    while len(pending) > 0:
        if fixed is not None:
            lam = fixed[pending]
            if kind.conditional.family == "laplace_rate":
                theta[pending] = generator.laplace(0.0, 1 / lam)
            else:
                theta[pending] = generator.normal(lam, np.sqrt(kind.conditional.var))
        obs = lik.sample(theta[pending], generator)
        keep = rule.contains(obs)
        y[pending[keep]] = obs[keep]
        draws += len(pending)
        pending = pending[~keep]
        rounds += 1
        if rounds > 1 / MIN_ACCEPTANCE and len(pending) > 0:
            raise InfeasibleTruncationError("{} realizations were not selected after {} redraws".format(
                len(pending), rounds), rate=n / draws)
    return TruncatedSample(theta, y, draws)


@attr.s(frozen=True)
class FixedRulePolicy:
    """
    The same selection rule in every replication
    """
    rule = attr.ib()

    def to_dict(self):
        return { "policy": "fixed_rule", "rule": self.rule.to_dict() }


@attr.s(frozen=True)
class BHPolicy:
    """
    BH at level q on two-sided p-values in every replication, with interval statements for the discoveries

    interval_q sets the FCR-adjusted intervals; credible_prior, when given, adds random-effect credible
    intervals under that prior next to the flat-prior ones.
    """
    q = attr.ib(converter=float)
    interval_q = attr.ib(converter=float, default=0.05)
    level = attr.ib(converter=float, default=0.95)
    credible_prior = attr.ib(default=None)
    credible = attr.ib(default=False)

    def to_dict(self):
        document = { "policy": "bh", "q": self.q, "interval_q": self.interval_q, "level": self.level,
                     "credible": self.credible }
        if self.credible_prior is not None:
            document["credible_prior"] = self.credible_prior.to_dict()
        return document


@attr.s(frozen=True)
class ReplicationStats:
    """
    Means and standard errors (sd / sqrt(n_reps)) over replications; se fields are nan when n_reps = 1
    """
    n_reps = attr.ib()
    mean_R = attr.ib()
    mean_V = attr.ib()
    mean_FDP = attr.ib()
    se_R = attr.ib()
    se_V = attr.ib()
    se_FDP = attr.ib()
    se_defined = attr.ib(default=True)
    extra = attr.ib(factory=dict)

    def ci99(self, field):
        mean, se = getattr(self, "mean_" + field), getattr(self, "se_" + field)
        return (mean - 2.576 * se, mean + 2.576 * se)

    def to_dict(self):
        return attr.asdict(self)


def _replicate_one(task):
    spec, policy, rng = task
    theta, y = generate(spec, rng)
    sigma = spec.lik.sigma
    row = {}
    if isinstance(policy, FixedRulePolicy):
        selected = np.asarray(policy.rule.contains(y))
    else:
        result = bh_procedure(two_sided_pvalues(y, sigma), policy.q)
        selected = np.zeros(len(y), dtype=bool)
        selected[list(result.rejected)] = True
    chosen_y, chosen_theta = y[selected], theta[selected]
    wrong = np.sign(chosen_theta) != np.sign(chosen_y)
    R, V = int(selected.sum()), int(wrong.sum())
    row.update(R=R, V=V, FDP=V / max(1, R))

    if isinstance(policy, BHPolicy) and R > 0:
        lo, hi = normal_interval(chosen_y, sigma, policy.level)
        row["FCP_unadjusted"] = interval_coverage(lo, hi, chosen_theta).FCP
        adjusted = fcr_adjusted_cis([(i, v, sigma) for i, v in enumerate(chosen_y)], policy.interval_q, spec.m)
        row["FCP_adjusted"] = interval_coverage([a[1] for a in adjusted], [a[2] for a in adjusted], chosen_theta).FCP
        if policy.credible:
            rule = TwoSided(np.abs(chosen_y).min() * (1 - 1e-12))
            row["FCP_flat"] = credible_interval_coverage(Fixed(), Flat(), spec.lik, rule, chosen_y, chosen_theta,
                                                         policy.level).FCP
            if policy.credible_prior is not None:
                row["FCP_random"] = credible_interval_coverage(Random(), policy.credible_prior, spec.lik, rule, chosen_y,
                                                               chosen_theta, policy.level).FCP
    return row


def replicate(spec, rule_policy, n_reps, rng, workers=1):
    """
    Repeats generate and selection over independent sub-streams of rng

    Parameters
    ---
    spec : GenerativeSpec
    rule_policy : FixedRulePolicy or BHPolicy
    n_reps : number of replications
    rng : RngStream, replication i uses rng.substream(i)
    workers : processes; the output does not depend on it

    Returns
    ---
    (ReplicationStats, DataFrame) : the aggregate and the per-replication rows (rep, R, V, FDP, ...)
    """
    if n_reps < 1:
        raise DomainError("n_reps must be at least 1, got {}".format(n_reps))
    if not isinstance(spec.lik, NormalLocation):
        raise ConfigurationError("replication runs the normal location likelihood")
    tasks = [(spec, rule_policy, rng.substream(i)) for i in range(n_reps)]
    start = time.perf_counter()
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            rows = list(executor.map(_replicate_one, tasks))
    else:
        rows = [_replicate_one(task) for task in tasks]
    log.info("%d replications of m=%d in %.1fs", n_reps, spec.m, time.perf_counter() - start)

    frame = pd.DataFrame(rows)
    frame.insert(0, "rep", np.arange(n_reps))
    extra = {}
    for column in frame.columns:
        if column not in ("rep", "R", "V", "FDP"):
            extra["mean_" + column] = float(frame[column].mean())
    if n_reps == 1:
        se = { name: float("nan") for name in ("R", "V", "FDP") }
    else:
        se = { name: float(frame[name].std(ddof=1) / np.sqrt(n_reps)) for name in ("R", "V", "FDP") }
    summary = ReplicationStats(n_reps, float(frame["R"].mean()), float(frame["V"].mean()), float(frame["FDP"].mean()),
                             se["R"], se["V"], se["FDP"], n_reps > 1, extra)
    return summary, frame


def laplace_rate_mixture(rates=LAPLACE_RATES, weights=RATE_WEIGHTS):
    """
    Marginal prior of theta when a Laplace rate is drawn from rates with probabilities weights
    """
    return Mixture([(weight, Laplace(rate)) for weight, rate in zip(weights, rates)])


def laplace_rate_kinds(rates=LAPLACE_RATES, weights=RATE_WEIGHTS):
    """
    The random, mixed and fixed readings of the Laplace rate model, as (name, kind, prior)
    """
    prior = laplace_rate_mixture(rates, weights)
    mixed = Mixed(Discrete(rates, weights), ConditionalPrior("laplace_rate"))
    return [("random", Random(), prior), ("mixed", mixed, None), ("fixed", Fixed(), prior)]


def truncated_sampling_figure(rng, n=1000, rule=None, rates=LAPLACE_RATES, weights=RATE_WEIGHTS):
    """
    n selected (theta, y) realizations under each reading of the Laplace rate model

    Returns
    ---
    DataFrame : columns kind, theta, y
    """
    rule = rule or OneSided(3.111)
    frames = []
    for index, (name, kind, prior) in enumerate(laplace_rate_kinds(rates, weights)):
        sample = sample_truncated(GenerativeSpec(1, kind, prior), rule, 0, n, rng.substream(index))
        log.info("%s: %d selected realizations from %d draws", name, n, sample.draws)
        frame = sample.to_frame()
        frame.insert(0, "kind", name)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)
