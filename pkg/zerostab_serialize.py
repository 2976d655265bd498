"""
Deterministic text output for reports, grids and run tables.

JSON is emitted with insertion-ordered keys and every float written with the
fixed format ``%.15e`` so that identical computations produce byte-identical
files. Non-finite floats are written as the strings "inf", "-inf" and "nan".
"""

import csv
import io
import json
import math
from fractions import Fraction
from typing import Any, Iterable, Sequence

import numpy as np

from zerostab_errors import UsageError

SCHEMA_VERSION = 1
FLOAT_FORMAT = "%.15e"


def format_float(value: float) -> str:
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return FLOAT_FORMAT % value


def _emit(obj: Any, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end_pad = " " * (indent * level)

    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, Fraction):
        return json.dumps(str(obj))
    if isinstance(obj, (float, np.floating)):
        text = format_float(obj)
        if not math.isfinite(float(obj)):
            return json.dumps(text)
        return text
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(key))}: {_emit(value, indent, level + 1)}"
                 for key, value in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end_pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [_emit(value, indent, level + 1) for value in obj]
        if all(not isinstance(value, (dict, list, tuple, np.ndarray)) for value in obj):
            return "[" + ", ".join(items) + "]"
        return "[\n" + ",\n".join(pad + item for item in items) + "\n" + end_pad + "]"
    if hasattr(obj, "model_dump"):
        return _emit(obj.model_dump(by_alias=True), indent, level)
    raise TypeError(f"Cannot serialize object of type {type(obj).__name__}")


def to_json(payload: Any, indent: int = 2) -> str:
    """Serialize ``payload`` deterministically (fixed key order and float format)."""
    return _emit(payload, indent, 0) + "\n"


def with_schema(payload: dict) -> dict:
    """Return ``payload`` with the versioned ``schema`` field first."""
    return {"schema": SCHEMA_VERSION, **payload}


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    return str(value)


def to_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    """Write a CSV table with the fixed float format; ``None`` becomes an empty cell."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(value) for value in row])
    return buffer.getvalue()


def parse_number(text: str, exact: bool = False):
    """Parse "3", "0.25", "1/2" or "-7/6"; Fractions in exact mode, floats otherwise."""
    text = text.strip()
    try:
        value = Fraction(text)
    except (ValueError, ZeroDivisionError) as e:
        try:
            value = float(text)
        except ValueError:
            raise UsageError(f"Not a number: {text!r}") from e
        return Fraction(value) if exact and math.isfinite(value) else value
    return value if exact else float(value)
