"""Deterministic JSON encoding for API responses.

The stdlib encoder emits floats via repr, whose text can differ between
Python builds for the same bit pattern. Responses here format every
float with 17 significant digits, enough to round-trip any double, so a
recorded response stays byte-stable.
"""

import json
import math

from ..errors import NumericError


def _encode(value, out: list[str]) -> None:
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, float):
        if not math.isfinite(value):
            raise NumericError(f"cannot serialize non-finite value {value}", where="json")
        out.append(format(value, ".17g"))
    elif isinstance(value, str):
        out.append(json.dumps(value, ensure_ascii=True))
    elif isinstance(value, dict):
        out.append("{")
        for i, (key, item) in enumerate(value.items()):
            if not isinstance(key, str):
                raise NumericError(f"object keys must be strings, got {key!r}", where="json")
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=True))
            out.append(":")
            _encode(item, out)
        out.append("}")
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _encode(item, out)
        out.append("]")
    else:
        raise NumericError(f"cannot serialize {type(value).__name__}", where="json")


def dumps_stable(payload) -> str:
    """Compact JSON with deterministic float text; key order is the
    dict insertion order, which handlers keep fixed."""
    out: list[str] = []
    _encode(payload, out)
    return "".join(out)
