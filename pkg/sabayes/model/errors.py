class SaBayesError(Exception):
    """
    Base class of every error raised by sabayes

    fields names the typed diagnostics a subclass carries; to_dict reports those that are set.
    """
    fields = ()

    def __init__(self, message):
        super().__init__("Error: {}".format(message))
        self.detail = message

    def to_dict(self):
        """
        Returns
        ---
        dictionary : diagnostic document emitted by the command-line interface
        """
        document = { "error": type(self).__name__, "message": self.detail }
        document.update({ name: getattr(self, name) for name in self.fields if getattr(self, name) is not None })
        return document


class DomainError(SaBayesError, ValueError):
    pass


class PreconditionError(SaBayesError, ValueError):
    pass


class ConfigurationError(SaBayesError, ValueError):
    pass


class UnsupportedCombinationError(SaBayesError, TypeError):
    pass


class NumericError(SaBayesError, ArithmeticError):
    fields = ("location",)

    def __init__(self, message, location=None):
        super().__init__(message if location is None else "{} (at {:.6g})".format(message, location))
        self.location = location


class BracketingError(NumericError):
    pass


class ImproperPosteriorError(NumericError):
    fields = ("location", "tail")

    def __init__(self, message, tail=None):
        super().__init__(message)
        self.tail = tail


class CalibrationError(SaBayesError):
    fields = ("risk_range",)

    def __init__(self, message, risk_range=None):
        super().__init__(message)
        self.risk_range = risk_range


class DegenerateRuleError(SaBayesError):
    pass


class InfeasibleTruncationError(SaBayesError):
    fields = ("rate",)

    def __init__(self, message, rate=None):
        super().__init__(message)
        self.rate = rate


class FitError(SaBayesError):
    pass


class IngestError(SaBayesError, ValueError):
    fields = ("line",)

    def __init__(self, message, line=None):
        super().__init__(message if line is None else "line {}: {}".format(line, message))
        self.line = line
