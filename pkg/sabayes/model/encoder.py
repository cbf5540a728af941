import io
import json
import sys
from json import JSONEncoder

import numpy as np
import pandas as pd

from sabayes.model.errors import ConfigurationError, IngestError

CONFIG_PREFIX = "# config: "
FORMATS = ("json", "csv")


class NumpyEncoder(JSONEncoder):
    def default(self, obj):
        if isinstance(obj, np.integer):
            return int(obj)
        elif isinstance(obj, np.floating):
            return float(obj)
        elif isinstance(obj, np.bool_):
            return bool(obj)
        elif isinstance(obj, np.ndarray):
            return obj.tolist()
        elif hasattr(obj, "to_dict"):
            return obj.to_dict()
        else:
            return super(NumpyEncoder, self).default(obj)


def dumps(document, indent=2):
    return json.dumps(document, cls=NumpyEncoder, sort_keys=True, indent=indent)


def _frame(result):
    if isinstance(result, pd.DataFrame):
        return result
    if isinstance(result, list):
        return pd.DataFrame([row.to_dict() if hasattr(row, "to_dict") else row for row in result])
    document = result.to_dict() if hasattr(result, "to_dict") else result
    if not isinstance(document, dict):
        raise ConfigurationError("result of type {} has no CSV form".format(type(result).__name__))
    return pd.DataFrame([{ key: value for key, value in document.items() if np.ndim(value) == 0 }])


def render(result, config, fmt="json"):
    """
    Parameters
    ---
    result : DataFrame, object with to_dict, list or dictionary
    config : dictionary of the resolved configuration, echoed into the output
    fmt : "json" wraps result and config in one document; "csv" writes a "# config:" line then the table

    Returns
    ---
    string : the output text
    """
    if fmt not in FORMATS:
        raise ConfigurationError("format must be one of {}, got {}".format(FORMATS, fmt))
    if fmt == "json":
        if isinstance(result, pd.DataFrame):
            result = result.to_dict(orient="records")
        return dumps({ "config": config, "result": result }) + "\n"
    buffer = io.StringIO()
    buffer.write(CONFIG_PREFIX + json.dumps(config, cls=NumpyEncoder, sort_keys=True) + "\n")
    _frame(result).to_csv(buffer, index=False, float_format="%.17g")
    return buffer.getvalue()


def emit(result, config, output=None, fmt="json"):
    """
    Writes render(result, config, fmt) to the output path, or to stdout when output is None
    """
    text = render(result, config, fmt)
    if output is None:
        sys.stdout.write(text)
        return
    with open(output, "w", encoding="utf-8", newline="") as target:
        target.write(text)


def read_csv(path):
    """
    Reads a CSV written by render

    Returns
    ---
    (dictionary, DataFrame) : the echoed configuration (empty when absent) and the table
    """
    with open(path, "r", encoding="utf-8") as source:
        first = source.readline()
    config = {}
    skip = 0
    if first.startswith(CONFIG_PREFIX):
        try:
            config = json.loads(first[len(CONFIG_PREFIX):])
        except json.JSONDecodeError as error:
            raise IngestError("unreadable configuration header in {}: {}".format(path, error), line=1) from error
        skip = 1
    return config, pd.read_csv(path, skiprows=skip)
