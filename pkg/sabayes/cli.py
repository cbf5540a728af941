import argparse
import json
import logging
import sys
import time

import numpy as np
import pandas as pd

from sabayes.model import configuration
from sabayes.model.encoder import dumps, emit
from sabayes.model.errors import ConfigurationError, SaBayesError
from sabayes.model.figures import figure
from sabayes.model.microarray import (
    GeneLossThreshold, GeneTable, calibrate_gene_rule, conservative_directional_fdr, count_discoveries,
    fit_laplace_rate, fit_variance_prior, gene_posterior, gene_report, gene_risk, ingest, moderated_t, raw_t_bh,
    RiskSurface)
from sabayes.model.multiplicity import bh_procedure, fcr_adjusted_cis
from sabayes.model.numerics import RngStream
from sabayes.model.posterior import freq_selective_ci, sa_posterior, summarize, unadjusted_posterior
from sabayes.model.risk import calibrate_rule, sabayes_risk
from sabayes.model.selection import StatThreshold
from sabayes.model.simulation import BHPolicy, FixedRulePolicy, GenerativeSpec, generate, replicate, sample_truncated

log = logging.getLogger("sabayes")


def _document(text):
    """
    A flag value that is either a JSON document or a plain string such as "flat" or "twosided:3.111"
    """
    text = text.strip()
    if text.startswith("{") or text.startswith("["):
        try:
            return json.loads(text)
        except json.JSONDecodeError as error:
            raise argparse.ArgumentTypeError("invalid JSON document: {}".format(error))
    return text


def _common(parser):
    parser.add_argument("--config", help="JSON configuration document")
    parser.add_argument("--seed", type=int, help="random seed (default: $SABAYES_SEED)")
    parser.add_argument("--workers", type=int, help="worker processes")
    parser.add_argument("--level", type=float, help="credible or confidence level")
    parser.add_argument("--verbose", action="store_true", default=None, help="log progress")
    parser.add_argument("--debug", action="store_true", help="log numeric diagnostics")
    parser.add_argument("--output", help="output file (default: stdout)")
    parser.add_argument("--format", choices=("json", "csv"), help="output format")


def _model(parser, rule=True):
    parser.add_argument("--prior", type=_document, help="prior document or \"flat\"")
    parser.add_argument("--kind", type=_document, help="random, fixed or a mixed document")
    parser.add_argument("--likelihood", type=_document, help="likelihood document")
    parser.add_argument("--model", dest="config", help="alias of --config")
    if rule:
        parser.add_argument("--rule", type=_document, help="rule shorthand (twosided:3.111) or document")


def build_parser():
    parser = argparse.ArgumentParser(prog="sabayes", description="Selection-adjusted Bayesian inference")
    commands = parser.add_subparsers(dest="command", required=True)

    command = commands.add_parser("posterior", help="selection-adjusted posterior summary")
    _common(command)
    _model(command)
    command.add_argument("--y", type=float, required=True, help="the selected observation")
    command.add_argument("--unadjusted", action="store_true", help="ignore the selection")

    command = commands.add_parser("freq-ci", help="frequentist selective confidence interval")
    _common(command)
    _model(command)
    command.add_argument("--y", type=float, required=True)
    command.add_argument("--alpha", type=float, default=0.05)

    command = commands.add_parser("risk", help="saBayes risk of a selection rule")
    _common(command)
    _model(command)
    command.add_argument("--loss", type=_document)
    command.add_argument("--m", type=int)
    command.add_argument("--form", choices=("ratio", "expectation"), default="ratio")

    command = commands.add_parser("calibrate", help="rule with a target saBayes risk")
    _common(command)
    _model(command, rule=False)
    command.add_argument("--family", choices=("twosided", "onesided", "loss_threshold"), required=True)
    command.add_argument("--loss", type=_document)
    command.add_argument("--q", type=float, required=True)
    command.add_argument("--bracket", type=float, nargs=2)
    command.add_argument("--points", type=int, default=50)

    command = commands.add_parser("bh", help="Benjamini-Hochberg procedure")
    _common(command)
    command.add_argument("--pvalues", required=True, help="CSV with a p column (or p-values in the first column)")
    command.add_argument("--q", type=float, required=True)

    command = commands.add_parser("fcr", help="FCR-adjusted intervals for selected observations")
    _common(command)
    command.add_argument("--selected", required=True, help="CSV with y and optional index, sigma columns")
    command.add_argument("--q", type=float, required=True)
    command.add_argument("--m", type=int, required=True)

    command = commands.add_parser("simulate", help="draw parameters and observations")
    _common(command)
    _model(command)
    command.add_argument("--m", type=int)
    command.add_argument("--truncated", action="store_true", help="sample one component given its selection")
    command.add_argument("--target-index", type=int, default=0)
    command.add_argument("--n", type=int, default=1000)

    command = commands.add_parser("replicate", help="repeated selection with FDP and FCP statistics")
    _common(command)
    _model(command)
    command.add_argument("--m", type=int)
    command.add_argument("--n-reps", type=int, required=True)
    command.add_argument("--policy", choices=("fixed", "bh"), default="fixed")
    command.add_argument("--q", type=float, default=0.2)
    command.add_argument("--interval-q", type=float, default=0.05)
    command.add_argument("--credible", action="store_true", help="also score saBayes credible intervals")

    command = commands.add_parser("microarray", help="gene summary analysis")
    _common(command)
    command.add_argument("--genes", required=True, help="CSV with id,ybar,s2[,n,df]")
    command.add_argument("--fit-override", type=float, nargs=2, metavar=("NU0", "S0SQ"))
    command.add_argument("--laplace-rate", type=float)
    command.add_argument("--fit-laplace", action="store_true", help="fit the Laplace rate by marginal likelihood")
    command.add_argument("--t-cutoff", type=float, action="append", default=[])
    command.add_argument("--rho-cutoff", type=float, action="append", default=[])
    command.add_argument("--bh-q", type=float)
    command.add_argument("--raw-t-q", type=float)
    command.add_argument("--calibrate-q", type=float)
    command.add_argument("--gene", help="gene id whose posteriors are summarized")

    command = commands.add_parser("figure", help="data behind a figure, as CSV")
    _common(command)
    command.add_argument("number", type=int, choices=range(1, 7))
    command.add_argument("--genes", help="gene summary CSV plotted with the selection regions")
    return parser


def _configure_logging(args, config):
    level = logging.WARNING
    if config.verbose:
        level = logging.INFO
    if args.debug:
        level = logging.DEBUG
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s", force=True)


def _resolve(args):
    file_document = configuration.load(args.config) if getattr(args, "config", None) else {}
    flags = { name: getattr(args, name, None)
              for name in ("prior", "kind", "likelihood", "rule", "seed", "workers", "level", "verbose", "loss", "m") }
    if args.command == "microarray":
        override = file_document.get("fit")
        if args.fit_override is not None:
            override = { "nu0": args.fit_override[0], "s0sq": args.fit_override[1] }
        if override is not None and args.laplace_rate is not None:
            override = dict(override, laplace_rate=args.laplace_rate)
        flags["fit"] = override
    return configuration.RunConfig.resolve(file_document, flags)


def _rng(config):
    if config.seed is None:
        raise ConfigurationError("this command draws random numbers; pass --seed or set SABAYES_SEED")
    return RngStream(config.seed)


def _posterior(args, config):
    lik = config.likelihood
    if args.unadjusted:
        post = unadjusted_posterior(config.require("prior"), lik, args.y)
    else:
        post = sa_posterior(config.kind, config.prior, lik, config.require("rule"), args.y)
    return { "y": args.y, "summary": summarize(post, config.level), "diagnostics": post.diagnostics }


def _freq_ci(args, config):
    return freq_selective_ci(config.likelihood, config.require("rule"), args.y, alpha=args.alpha)


def _risk(args, config):
    m = config.document.get("m") or 1
    return sabayes_risk(config.require("prior"), config.likelihood, config.require("rule"), config.loss, m=m,
                        form=args.form)


def _calibrate(args, config):
    prior = config.require("prior")
    rule = calibrate_rule(args.family, prior, config.likelihood, config.loss, args.q, bracket=args.bracket,
                          points=args.points, workers=config.workers)
    return { "rule": rule, "risk": sabayes_risk(prior, config.likelihood, rule, config.loss) }


def _read_column(path, preferred):
    frame = pd.read_csv(path)
    column = preferred if preferred in frame.columns else frame.columns[0]
    return frame, frame[column].to_numpy(dtype=float)


def _bh(args, config):
    _, pvalues = _read_column(args.pvalues, "p")
    return bh_procedure(pvalues, args.q)


def _fcr(args, config):
    frame, y = _read_column(args.selected, "y")
    index = frame["index"].to_numpy() if "index" in frame.columns else np.arange(len(y))
    sigma = frame["sigma"].to_numpy(dtype=float) if "sigma" in frame.columns else np.ones(len(y))
    intervals = fcr_adjusted_cis(list(zip(index, y, sigma)), args.q, args.m)
    return pd.DataFrame(intervals, columns=["index", "lo", "hi"])


def _spec(config):
    return GenerativeSpec(config.m, config.kind, config.prior, config.likelihood)


def _simulate(args, config):
    if args.truncated:
        spec = GenerativeSpec(max(config.document.get("m") or 1, args.target_index + 1), config.kind, config.prior,
                              config.likelihood)
        return sample_truncated(spec, config.require("rule"), args.target_index, args.n, _rng(config)).to_frame()
    theta, y = generate(_spec(config), _rng(config))
    return pd.DataFrame({ "theta": theta, "y": y })


def _replicate(args, config):
    if args.policy == "fixed":
        policy = FixedRulePolicy(config.require("rule"))
    else:
        policy = BHPolicy(args.q, args.interval_q, config.level,
                          credible_prior=config.prior if args.credible else None, credible=args.credible)
    stats, frame = replicate(_spec(config), policy, args.n_reps, _rng(config), workers=config.workers)
    if args.format == "csv":
        return frame
    return { "stats": stats, "policy": policy }


def _microarray(args, config):
    records, rejected = ingest(args.genes, with_rejected=True)
    fit = config.fit
    if fit is None:
        fit = fit_variance_prior(records, laplace_rate=args.laplace_rate or 8.5)
    if args.fit_laplace:
        fit = fit_laplace_rate(records, fit)
    rules = { "t{}".format(a): StatThreshold("moderated_t", a, fit=fit) for a in args.t_cutoff }
    rules.update({ "rho{}".format(s): GeneLossThreshold(s, fit) for s in args.rho_cutoff })
    if args.format == "csv":
        return gene_report(records, fit, rules, config.workers)

    m = len(records)
    n, df = records[0].n if records else 4, records[0].df if records else 3.0
    surface = RiskSurface.build(fit, n, df)
    document = { "fit": fit, "m": m, "rejected": rejected, "rules": {} }
    for name, rule in rules.items():
        count = count_discoveries(records, rule, fit, workers=config.workers)
        document["rules"][name] = { "count": count.count, "risk": gene_risk(rule, fit, n, df, m, surface) }
        if isinstance(rule, StatThreshold):
            document["rules"][name]["conservative_fdr"] = conservative_directional_fdr(records, rule.s, fit)
    if args.bh_q is not None:
        count = count_discoveries(records, StatThreshold("moderated_t", 0.0, fit=fit), fit, bh_q=args.bh_q)
        document["bh"] = { "result": count.bh, "t_cutoff": count.bh_cutoff }
    if args.raw_t_q is not None:
        document["raw_t"] = raw_t_bh(records, args.raw_t_q)
    if args.calibrate_q is not None:
        document["calibrated"] = { family: calibrate_gene_rule(family, fit, args.calibrate_q, n, df,
                                                               workers=config.workers)
                                   for family in ("moderated_t", "gene_loss_threshold") }
    if args.gene is not None:
        record = GeneTable.from_records(records).find(args.gene)
        t, p = moderated_t(record, fit)
        posteriors = { "unadjusted": gene_posterior(record, fit),
                       "ebayes": gene_posterior(record, fit, effect_prior=fit.effect_prior()) }
        for name, rule in rules.items():
            if isinstance(rule, StatThreshold) and rule.contains(record):
                posteriors["flat_" + name] = gene_posterior(record, fit, rule)
        document["gene"] = { "record": record, "t": t, "p": p,
                             "posteriors": { name: summarize(post, config.level)
                                             for name, post in posteriors.items() } }
    return document


def _figure(args, config):
    options = {}
    if args.number == 5:
        if config.fit is not None:
            options["fit"] = config.fit
        if args.genes:
            options["records"] = ingest(args.genes)
    rng = _rng(config) if args.number in (1, 2, 4) else None
    return figure(args.number, rng, **options)


HANDLERS = { "posterior": _posterior, "freq-ci": _freq_ci, "risk": _risk, "calibrate": _calibrate, "bh": _bh,
             "fcr": _fcr, "simulate": _simulate, "replicate": _replicate, "microarray": _microarray,
             "figure": _figure }
TABLE_COMMANDS = ("fcr", "simulate", "figure")


def run(argv=None):
    """
    Parameters
    ---
    argv : list of strings, defaults to sys.argv[1:]

    Returns
    ---
    integer : 0 on success, 1 on a sabayes error (diagnostic JSON on stdout), 2 on a usage error
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit:
        return exit.code if isinstance(exit.code, int) else 2
    try:
        config = _resolve(args)
        _configure_logging(args, config)
        if args.format is None:
            args.format = "csv" if args.command in TABLE_COMMANDS else "json"
        start = time.perf_counter()
        result = HANDLERS[args.command](args, config)
        log.info("%s finished in %.2fs", args.command, time.perf_counter() - start)
        emit(result, config.to_dict(), args.output, args.format)
    except SaBayesError as error:
        sys.stdout.write(dumps(error.to_dict()) + "\n")
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
