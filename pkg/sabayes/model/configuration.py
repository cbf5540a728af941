import json
import logging
import os

import attr

from sabayes.model.distributions import (
    ConditionalPrior, Discrete, Fixed, Flat, Laplace, MeanAndVariance, Mixed, Mixture, Normal, NormalLocation,
    PointMass, Prior, Random, ScaledInvChiSq, TwoGroup)
from sabayes.model.errors import ConfigurationError, SaBayesError
from sabayes.model.loss import named_loss
from sabayes.model.microarray import EBayesFit, GeneLossThreshold
from sabayes.model.selection import (
    IntervalRule, LossThreshold, OneSided, SelectionRule, StatThreshold, TwoSided, WholeSpace)

log = logging.getLogger(__name__)

SEED_VARIABLE = "SABAYES_SEED"
MODEL_KEYS = ("prior", "likelihood", "kind", "rule", "seed", "m", "verbose", "workers", "level", "fit", "loss")
DEFAULTS = { "likelihood": { "type": "normal_location", "sigma": 1.0 }, "kind": "random", "level": 0.95,
             "workers": 1, "verbose": False }


def load(path):
    """
    Parameters
    ---
    path : string
        path to a JSON configuration document

    Returns
    ---
    dictionary : the parsed document
    """
    try:
        with open(path, "r") as source:
            document = json.load(source)
    except OSError as error:
        raise ConfigurationError("cannot read configuration {}: {}".format(path, error)) from error
    except json.JSONDecodeError as error:
        raise ConfigurationError("configuration {} is not valid JSON: {}".format(path, error)) from error
    if not isinstance(document, dict):
        raise ConfigurationError("configuration {} must be a JSON object".format(path))
    return document


def _field(document, name, key, default=attr.NOTHING):
    if not isinstance(document, dict):
        raise ConfigurationError("{} must be an object, got {!r}".format(key, document))
    if name in document:
        return document[name]
    if default is attr.NOTHING:
        raise ConfigurationError("{} is missing the field {}".format(key, name))
    return default


def _build(key, factory):
    try:
        return factory()
    except ConfigurationError:
        raise
    except SaBayesError as error:
        raise ConfigurationError("{}: {}".format(key, error.detail)) from error
    except (TypeError, ValueError) as error:
        raise ConfigurationError("{}: {}".format(key, error)) from error


def prior_from(document, key="prior"):
    """
    Prior from a document such as {"type": "laplace", "rate": 8.5}; the bare string "flat" is accepted
    """
    if isinstance(document, Prior):
        return document
    if isinstance(document, str):
        document = { "type": document }
    kind = _field(document, "type", key)

    def build():
        if kind == "normal":
            return Normal(_field(document, "mean", key, 0.0), _field(document, "var", key))
        if kind == "laplace":
            return Laplace(_field(document, "rate", key), _field(document, "location", key, 0.0))
        if kind == "mixture":
            components = _field(document, "components", key)
            return Mixture([(_field(c, "weight", key + ".components"),
                             prior_from(_field(c, "prior", key + ".components"), key + ".components"))
                            for c in components])
        if kind == "scaled_inv_chi_square":
            return ScaledInvChiSq(_field(document, "nu0", key), _field(document, "s0sq", key))
        if kind == "flat":
            return Flat()
        if kind == "discrete":
            return Discrete(_field(document, "values", key), _field(document, "weights", key))
        if kind == "point_mass":
            return PointMass(float(_field(document, "location", key)))
        if kind == "two_group":
            return TwoGroup(_field(document, "pi0", key), prior_from(_field(document, "alt", key), key + ".alt"))
        raise ConfigurationError("{} has unknown type {}".format(key, kind))

    return _build(key, build)


def likelihood_from(document, key="likelihood"):
    if isinstance(document, (NormalLocation, MeanAndVariance)):
        return document
    kind = _field(document, "type", key)
    if kind == "normal_location":
        return _build(key, lambda: NormalLocation(_field(document, "sigma", key, 1.0)))
    if kind == "mean_and_variance":
        return _build(key, lambda: MeanAndVariance(_field(document, "n", key, 4), _field(document, "df", key, 3.0)))
    raise ConfigurationError("{} has unknown type {}".format(key, kind))


def kind_from(document, key="kind"):
    """
    "random", "fixed" or {"type": "mixed", "hyperprior": {...}, "conditional": {"family": ...}}
    """
    if isinstance(document, (Random, Fixed, Mixed)):
        return document
    if document == "random":
        return Random()
    if document == "fixed":
        return Fixed()
    if _field(document, "type", key) != "mixed":
        raise ConfigurationError("{} must be random, fixed or a mixed document, got {!r}".format(key, document))
    conditional = _field(document, "conditional", key)

    def build():
        return Mixed(prior_from(_field(document, "hyperprior", key), key + ".hyperprior"),
                     ConditionalPrior(_field(conditional, "family", key + ".conditional"),
                                      _field(conditional, "var", key + ".conditional", None)))

    return _build(key, build)


def fit_from(document, key="fit"):
    if document is None or isinstance(document, EBayesFit):
        return document
    return _build(key, lambda: EBayesFit(_field(document, "nu0", key), _field(document, "s0sq", key),
                                         _field(document, "laplace_rate", key, 8.5), source="override"))


RULE_SHORTHANDS = { "twosided": TwoSided, "onesided": OneSided }


def rule_from(document, prior=None, likelihood=None, fit=None, key="rule"):
    """
    Selection rule from "twosided:3.111", "onesided:0", "whole", "moderated_t:4.479" or an object document

    Loss threshold rules are bound to prior and likelihood when given; moderated t and gene loss rules
    carry fit.
    """
    if isinstance(document, SelectionRule):
        return document
    if isinstance(document, str):
        name, _, value = document.partition(":")
        if name == "whole" and not value:
            return WholeSpace()
        try:
            number = float(value)
        except ValueError:
            raise ConfigurationError("{} shorthand {!r} needs a numeric cutoff after ':'".format(key, document))
        if name in RULE_SHORTHANDS:
            return _build(key, lambda: RULE_SHORTHANDS[name](number))
        if name == "moderated_t":
            return _build(key, lambda: StatThreshold("moderated_t", number, fit=fit))
        raise ConfigurationError("{} has unknown shorthand {!r}".format(key, document))

    kind = _field(document, "type", key)

    def build():
        if kind in RULE_SHORTHANDS:
            return RULE_SHORTHANDS[kind](_field(document, "a", key))
        if kind == "whole":
            return WholeSpace()
        if kind == "intervals":
            return IntervalRule(_field(document, "intervals", key))
        if kind == "stat_threshold":
            return StatThreshold(_field(document, "stat", key), _field(document, "s", key),
                                 _field(document, "direction", key, "abs_greater"), fit=fit)
        if kind == "loss_threshold":
            rule = LossThreshold(_field(document, "loss", key, "directional"), _field(document, "s", key))
            return rule.bind(prior, likelihood) if prior is not None and likelihood is not None else rule
        if kind == "gene_loss_threshold":
            return GeneLossThreshold(_field(document, "s", key), fit)
        raise ConfigurationError("{} has unknown type {}".format(key, kind))

    return _build(key, build)


def _seed(value, source):
    try:
        seed = int(value)
    except (TypeError, ValueError):
        raise ConfigurationError("seed from {} must be an integer, got {!r}".format(source, value))
    if not 0 <= seed < 2 ** 64:
        raise ConfigurationError("seed from {} must be a 64-bit unsigned integer, got {}".format(source, seed))
    return seed


@attr.s(frozen=True)
class RunConfig:
    """
    Resolved run configuration: defaults, overridden by the configuration file, overridden by flags

    The model objects are built eagerly so a malformed document fails before any computation.
    """
    document = attr.ib()
    prior = attr.ib(init=False)
    likelihood = attr.ib(init=False)
    kind = attr.ib(init=False)
    fit = attr.ib(init=False)
    rule = attr.ib(init=False)

    def __attrs_post_init__(self):
        unknown = sorted(set(self.document) - set(MODEL_KEYS))
        if unknown:
            raise ConfigurationError("unknown configuration key {}, expected one of {}".format(unknown[0], MODEL_KEYS))
        document = self.document
        prior = prior_from(document["prior"]) if document.get("prior") is not None else None
        likelihood = likelihood_from(document["likelihood"])
        fit = fit_from(document.get("fit"))
        rule = None
        if document.get("rule") is not None:
            rule = rule_from(document["rule"], prior, likelihood, fit)
        for name, value in (("prior", prior), ("likelihood", likelihood), ("kind", kind_from(document["kind"])),
                            ("fit", fit), ("rule", rule)):
            object.__setattr__(self, name, value)
        if document.get("loss") is not None:
            _build("loss", lambda: named_loss(document["loss"]))
        if not 0 < float(document["level"]) < 1:
            raise ConfigurationError("level must lie in (0, 1), got {}".format(document["level"]))
        if int(document["workers"]) < 1:
            raise ConfigurationError("workers must be at least 1, got {}".format(document["workers"]))

    @classmethod
    def resolve(cls, file_document=None, flags=None, environ=None):
        """
        Parameters
        ---
        file_document : dictionary from a configuration file
        flags : dictionary of command-line values; None entries are not set
        environ : mapping consulted for SABAYES_SEED, defaults to os.environ
        """
        environ = os.environ if environ is None else environ
        merged = dict(DEFAULTS)
        merged.update(file_document or {})
        merged.update({ name: value for name, value in (flags or {}).items() if value is not None })
        if merged.get("seed") is not None:
            merged["seed"] = _seed(merged["seed"], "the configuration")
        elif SEED_VARIABLE in environ:
            merged["seed"] = _seed(environ[SEED_VARIABLE], SEED_VARIABLE)
        return cls(merged)

    @property
    def seed(self):
        return self.document.get("seed")

    @property
    def level(self):
        return float(self.document["level"])

    @property
    def workers(self):
        return int(self.document["workers"])

    @property
    def verbose(self):
        return bool(self.document["verbose"])

    @property
    def loss(self):
        return named_loss(self.document.get("loss") or "directional")

    @property
    def m(self):
        if self.document.get("m") is None:
            raise ConfigurationError("m is required for this command")
        return int(self.document["m"])

    def require(self, name):
        value = getattr(self, name)
        if value is None:
            raise ConfigurationError("{} is required for this command".format(name))
        return value

    def to_dict(self):
        """
        The resolved document with every model object in its canonical form
        """
        document = dict(self.document)
        for name in ("prior", "likelihood", "kind", "fit", "rule"):
            value = getattr(self, name)
            if value is not None:
                document[name] = value.to_dict()
        if document.get("loss") is not None:
            document["loss"] = self.loss.to_dict()
        return document
