import pytest

from sabayes.model.errors import (
    CalibrationError, ConfigurationError, ImproperPosteriorError, InfeasibleTruncationError, IngestError,
    NumericError)


def test_plain_errors_carry_a_message():
    assert ConfigurationError("bad prior").to_dict() == { "error": "ConfigurationError", "message": "bad prior" }


@pytest.mark.parametrize("error, expected", [
    (CalibrationError("no crossing", risk_range=(0.1, 0.2)), { "risk_range": (0.1, 0.2) }),
    (ImproperPosteriorError("diverges", tail="left"), { "tail": "left" }),
    (InfeasibleTruncationError("too far", rate=3.5), { "rate": 3.5 }),
    (IngestError("bad row", line=3), { "line": 3 }),
    (NumericError("no root", location=1.5), { "location": 1.5 }),
])
def test_typed_fields_are_reported(error, expected):
    document = error.to_dict()
    assert document["error"] == type(error).__name__
    assert document["message"] == error.detail
    for name, value in expected.items():
        assert document[name] == value
    assert set(document) == { "error", "message" } | set(expected)


def test_unset_fields_are_omitted():
    assert set(CalibrationError("no crossing").to_dict()) == { "error", "message" }
    assert set(ImproperPosteriorError("diverges").to_dict()) == { "error", "message" }
