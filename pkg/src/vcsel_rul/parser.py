"""Decoders for the toolkit's on-disk text formats."""

from __future__ import annotations

import csv
import json
import math
from typing import Any, Iterable, Optional, TextIO

from .const import CONDITIONS_HEADER, FLEET_HEADER, N_CONDITIONS
from .errors import ParseError

CHECKPOINT_MAGIC = "vcsel-rul-checkpoint"
CHECKPOINT_HEADER_KEYS = ("format_version", "spec", "stats", "metadata", "parameter_count")


def _parse_float(token: str, where: str) -> float:
    try:
        value = float(token.strip())
    except ValueError:
        raise ParseError(f"{where}: invalid number {token!r}") from None
    if not math.isfinite(value):
        raise ParseError(f"{where}: non-finite number {token!r}")
    return value


def _parse_optional_float(token: str, where: str) -> Optional[float]:
    if not token.strip():
        return None
    return _parse_float(token, where)


def _parse_bool(token: str, where: str) -> bool:
    normalized = token.strip().lower()
    if normalized in ("true", "1"):
        return True
    if normalized in ("false", "0"):
        return False
    raise ParseError(f"{where}: invalid boolean {token!r}")


def _check_header(reader: Iterable[list[str]], expected: tuple[str, ...], source: str) -> None:
    header = next(iter(reader), None)
    if header is None or tuple(h.strip() for h in header) != expected:
        raise ParseError(f"{source}: header {header!r} does not match {','.join(expected)!r}")


def parse_fleet_csv(f: TextIO, source: str) -> dict[str, tuple[list[float], list[float]]]:
    """``device_id,time_h,power_mw`` rows grouped per device in file order."""
    reader = csv.reader(f)
    _check_header(reader, FLEET_HEADER, source)
    traces: dict[str, tuple[list[float], list[float]]] = {}
    for lineno, row in enumerate(reader, start=2):
        where = f"{source}:{lineno}"
        if len(row) != len(FLEET_HEADER):
            raise ParseError(f"{where}: expected {len(FLEET_HEADER)} fields, got {row!r}")
        times, power = traces.setdefault(row[0], ([], []))
        t = _parse_float(row[1], where)
        if times and t <= times[-1]:
            raise ParseError(f"{where}: time {t!r} does not increase for device {row[0]!r}")
        times.append(t)
        power.append(_parse_float(row[2], where))
    return traces


def parse_conditions_csv(
    f: TextIO, source: str
) -> list[tuple[str, tuple[float, ...], Optional[float], bool]]:
    reader = csv.reader(f)
    _check_header(reader, CONDITIONS_HEADER, source)
    rows = []
    for lineno, row in enumerate(reader, start=2):
        where = f"{source}:{lineno}"
        if len(row) != len(CONDITIONS_HEADER):
            raise ParseError(f"{where}: expected {len(CONDITIONS_HEADER)} fields, got {row!r}")
        features = tuple(_parse_float(tok, where) for tok in row[1 : 1 + N_CONDITIONS])
        t_f = _parse_optional_float(row[1 + N_CONDITIONS], where)
        censored = _parse_bool(row[2 + N_CONDITIONS], where)
        if censored != (t_f is None):
            raise ParseError(f"{where}: censored={censored} contradicts t_f_h={row[1 + N_CONDITIONS]!r}")
        rows.append((row[0], features, t_f, censored))
    return rows


def _number_list(obj: dict[str, Any], key: str, where: str) -> list[float]:
    values = obj[key]
    if not isinstance(values, list) or not values:
        raise ParseError(f"{where}: field {key!r} must be a non-empty list of numbers, got {values!r}")
    out = []
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ParseError(f"{where}: field {key!r} holds a non-numeric or non-finite value {v!r}")
        out.append(float(v))
    return out


def parse_dataset_line(line: str, where: str, window: Optional[int] = None) -> dict[str, Any]:
    """One ``dataset.jsonl`` object; ``window`` and ``conditions`` come back as float lists.

    ``window``, when given, is the exact number of power values each line must carry.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as err:
        raise ParseError(f"{where}: invalid JSON at column {err.colno}: {err.msg}") from None
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected an object, got {type(obj).__name__}")
    for key in ("device_id", "window", "t_end_h", "conditions", "rul_h"):
        if key not in obj:
            raise ParseError(f"{where}: missing field {key!r}")
    obj["window"] = _number_list(obj, "window", where)
    obj["conditions"] = _number_list(obj, "conditions", where)
    if len(obj["conditions"]) != N_CONDITIONS:
        raise ParseError(f"{where}: field 'conditions' needs {N_CONDITIONS} values, got {len(obj['conditions'])}")
    if window is not None and len(obj["window"]) != window:
        raise ParseError(f"{where}: field 'window' needs {window} values, got {len(obj['window'])}")
    return obj


def parse_checkpoint(text: str, source: str) -> tuple[dict[str, str], list[float]]:
    """Split a checkpoint into its ``key: value`` header and flat parameter values.

    Errors name the line and byte offset of the offending content.
    """
    lines = text.split("\n")
    offsets = []
    pos = 0
    for line in lines:
        offsets.append(pos)
        pos += len(line.encode("utf-8")) + 1

    def where(idx: int) -> str:
        return f"{source}: line {idx + 1} (byte {offsets[idx] if idx < len(offsets) else pos})"

    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ParseError(f"{where(0)}: not a checkpoint (expected {CHECKPOINT_MAGIC!r})")

    header: dict[str, str] = {}
    idx = 1
    while idx < len(lines) and lines[idx] != "parameters:":
        key, sep, value = lines[idx].partition(": ")
        if not sep:
            raise ParseError(f"{where(idx)}: malformed header line {lines[idx][:60]!r}")
        header[key] = value
        idx += 1
    if idx >= len(lines):
        raise ParseError(f"{where(len(lines) - 1)}: truncated before 'parameters:' section")
    for key in CHECKPOINT_HEADER_KEYS:
        if key not in header:
            raise ParseError(f"{source}: missing header field {key!r}")

    try:
        expected = int(header["parameter_count"])
    except ValueError:
        raise ParseError(f"{source}: field 'parameter_count' is not an integer: {header['parameter_count']!r}") from None

    values = []
    for j in range(idx + 1, len(lines)):
        if lines[j] == "" and j == len(lines) - 1:
            break
        values.append(_parse_float(lines[j], where(j)))
    if len(values) != expected:
        raise ParseError(
            f"{source}: field 'parameter_count' says {expected} values, file holds {len(values)} "
            f"(truncated at byte {pos - 1})"
        )
    return header, values
