import logging

import numpy as np
import pandas as pd

from sabayes.model.distributions import Fixed, Flat, NormalLocation, Random
from sabayes.model.errors import ConfigurationError
from sabayes.model.microarray import (
    EBayesFit, GeneRecord, GeneTable, as_table, gene_posterior, gene_rho)
from sabayes.model.multiplicity import bh_procedure, fcr_adjusted_cis, two_sided_pvalues
from sabayes.model.posterior import credible_intervals, normal_interval, sa_posterior, unadjusted_posterior
from sabayes.model.selection import OneSided, StatThreshold, TwoSided
from sabayes.model.simulation import GenerativeSpec, generate, laplace_rate_mixture, truncated_sampling_figure

log = logging.getLogger(__name__)

EXAMPLE_M = 100_000
EXAMPLE_CUTOFF = 3.111
REFERENCE_FIT = EBayesFit(4.02, 0.052, 8.5)
REFERENCE_GENE = GeneRecord("6239", -0.435, 0.0173)
RHO_BISECTIONS = 60


def _example_data(rng, m):
    spec = GenerativeSpec(m, Random(), laplace_rate_mixture())
    return generate(spec, rng)


def selection_intervals_figure(rng, m=EXAMPLE_M, q=0.2, interval_q=0.05, level=0.95):
    """
    BH discoveries at level q on simulated Laplace rate mixture data, with their marginal and
    FCR-adjusted intervals

    Returns
    ---
    DataFrame : index, theta, y, marginal_lo, marginal_hi, fcr_lo, fcr_hi
    """
    theta, y = _example_data(rng, m)
    result = bh_procedure(two_sided_pvalues(y), q)
    index = np.array(result.rejected, dtype=int)
    lo, hi = normal_interval(y[index], 1.0, level)
    adjusted = fcr_adjusted_cis([(i, y[i], 1.0) for i in index], interval_q, m)
    return pd.DataFrame({ "index": index, "theta": theta[index], "y": y[index], "marginal_lo": lo,
                          "marginal_hi": hi, "fcr_lo": [a[1] for a in adjusted],
                          "fcr_hi": [a[2] for a in adjusted] })


def posterior_densities_figure(ys=(3.40, 5.59), cutoff=EXAMPLE_CUTOFF, thetas=None):
    """
    Unadjusted, random-effect and flat-prior fixed-effect posterior densities for selected observations

    Returns
    ---
    DataFrame : y, theta, unadjusted, random, flat
    """
    lik, rule = NormalLocation(1.0), TwoSided(cutoff)
    thetas = np.linspace(-4.0, 9.0, 1301) if thetas is None else np.asarray(thetas, dtype=float)
    frames = []
    for y in ys:
        posts = { "unadjusted": unadjusted_posterior(Flat(), lik, y),
                  "random": sa_posterior(Random(), laplace_rate_mixture(), lik, rule, y),
                  "flat": sa_posterior(Fixed(), Flat(), lik, rule, y) }
        frame = pd.DataFrame({ "y": y, "theta": thetas })
        for name, post in posts.items():
            frame[name] = post.density_at(thetas)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def credible_intervals_figure(rng, m=EXAMPLE_M, cutoff=EXAMPLE_CUTOFF, level=0.95):
    """
    Observations above cutoff with their random-effect and flat-prior credible intervals

    The flat-prior intervals under a one-sided rule have long left tails, so each comes from its own
    adaptive posterior.
    """
    theta, y = _example_data(rng, m)
    lik, rule = NormalLocation(1.0), OneSided(cutoff)
    index = np.flatnonzero(rule.contains(y))
    random_lo, random_hi = credible_intervals(Random(), laplace_rate_mixture(), lik, rule, y[index], level)
    flat = [sa_posterior(Fixed(), Flat(), lik, rule, value) for value in y[index]]
    alpha = 1 - level
    log.info("%d observations above %.4g", len(index), cutoff)
    return pd.DataFrame({ "index": index, "theta": theta[index], "y": y[index], "random_lo": random_lo,
                          "random_hi": random_hi, "flat_lo": [post.quantile(alpha / 2) for post in flat],
                          "flat_hi": [post.quantile(1 - alpha / 2) for post in flat] })


def _rho_contour(fit, s, level, n, df):
    """
    ybar >= 0 at which gene_rho falls to level, per sample standard deviation s
    """
    scale = np.sqrt(fit.moderated_variance(s ** 2, df) / n)
    lo, hi = np.zeros(len(s)), 30 * scale
    ids = np.array(["curve"] * len(s))
    for _ in range(RHO_BISECTIONS):
        mid = (lo + hi) / 2
        rho = gene_rho(GeneTable(ids, mid, s ** 2, np.full(len(s), n), np.full(len(s), df)), fit)
        above = rho > level
        lo, hi = np.where(above, mid, lo), np.where(above, hi, mid)
    return (lo + hi) / 2


def selection_regions_figure(fit=REFERENCE_FIT, records=None, t_cutoffs=(4.479, 2.64), rho_cutoffs=(0.05, 0.088),
                             n=4, df=3.0, s_max=1.0, points=200):
    """
    Boundaries of moderated t and directional loss selection regions in the (ybar, s) plane, with the
    genes as points when records are given

    Returns
    ---
    DataFrame : curve, id, s, ybar
    """
    s = np.linspace(s_max / points, s_max, points)
    frames = []
    for a in t_cutoffs:
        edge = a * np.sqrt(fit.moderated_variance(s ** 2, df) / n)
        for sign in (1, -1):
            frames.append(pd.DataFrame({ "curve": "t>{}".format(a), "id": "", "s": s, "ybar": sign * edge }))
    for level in rho_cutoffs:
        edge = _rho_contour(fit, s, level, n, df)
        for sign in (1, -1):
            frames.append(pd.DataFrame({ "curve": "rho<{}".format(level), "id": "", "s": s, "ybar": sign * edge }))
    if records is not None:
        table = as_table(records)
        frames.append(pd.DataFrame({ "curve": "genes", "id": table.ids, "s": np.sqrt(table.s2), "ybar": table.ybar }))
    return pd.concat(frames, ignore_index=True)


def gene_posteriors_figure(record=REFERENCE_GENE, fit=REFERENCE_FIT, t_cutoffs=(4.479, 2.64), mus=None):
    """
    Posterior densities of one gene's mean: unadjusted, Laplace eBayes, and flat prior adjusted for each
    moderated t rule

    Returns
    ---
    DataFrame : mu, unadjusted, ebayes, flat_t<a> per cutoff
    """
    mus = np.linspace(-1.0, 0.4, 701) if mus is None else np.asarray(mus, dtype=float)
    frame = pd.DataFrame({ "mu": mus })
    frame["unadjusted"] = gene_posterior(record, fit).density_at(mus)
    frame["ebayes"] = gene_posterior(record, fit, effect_prior=fit.effect_prior()).density_at(mus)
    for a in t_cutoffs:
        rule = StatThreshold("moderated_t", a, fit=fit)
        frame["flat_t{}".format(a)] = gene_posterior(record, fit, rule).density_at(mus)
    return frame


FIGURES = { 1: selection_intervals_figure, 2: truncated_sampling_figure, 3: posterior_densities_figure,
            4: credible_intervals_figure, 5: selection_regions_figure, 6: gene_posteriors_figure }
SEEDED = (1, 2, 4)


def figure(number, rng=None, **options):
    """
    Data behind figure number (1 to 6) as a DataFrame; figures 1, 2 and 4 simulate and need rng
    """
    if number not in FIGURES:
        raise ConfigurationError("figure must be one of {}, got {}".format(sorted(FIGURES), number))
    if number in SEEDED:
        if rng is None:
            raise ConfigurationError("figure {} simulates data and needs a seed".format(number))
        return FIGURES[number](rng, **options)
    return FIGURES[number](**options)
