"""
Structured JSON logging.

Every record is one JSON object per line with ``level``, ``message``,
camelCase context fields and a UTC ``timestamp``.
"""
import json
import os
import sys
import traceback
from datetime import datetime, timezone

import numpy as np

LEVELS = {"DEBUG": 10, "INFO": 20, "WARNING": 30, "ERROR": 40, "CRITICAL": 50}


class NumpyEncoder(json.JSONEncoder):
    """Helper class to convert numpy scalars and arrays to JSON"""
    def default(self, obj):
        if isinstance(obj, np.integer):
            return int(obj)
        if isinstance(obj, np.floating):
            return float(obj)
        if isinstance(obj, np.bool_):
            return bool(obj)
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        return super(NumpyEncoder, self).default(obj)


def _threshold():
    name = os.environ.get("TIMBRELAB_LOG_LEVEL", "INFO").upper()
    return LEVELS.get(name, LEVELS["INFO"])


def log_event(level, message, **fields):
    """
    Emit one structured log line on stderr.

    Args:
        level (str): DEBUG, INFO, WARNING, ERROR or CRITICAL
        message (str): Human-readable summary
        **fields: Extra context, camelCase keys by convention
    """
    level = level.upper()
    if LEVELS.get(level, 0) < _threshold():
        return
    record = {"level": level, "message": message}
    record.update(fields)
    record["timestamp"] = datetime.now(timezone.utc).isoformat()
    print(json.dumps(record, cls=NumpyEncoder), file=sys.stderr, flush=True)


def log_exception(message, error, **fields):
    """Log an exception with its type and stack trace."""
    log_event(
        "ERROR",
        message,
        error=str(error),
        errorType=type(error).__name__,
        stackTrace=traceback.format_exc(),
        **fields,
    )


def to_json_line(record):
    """Serialise a record as a deterministic JSON line (sorted keys)."""
    return json.dumps(record, cls=NumpyEncoder, sort_keys=True)
