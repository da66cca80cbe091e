"""CSV ingestion, tidy CSV emission, grid specs and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import re
from typing import Iterable, Optional, Sequence

import numpy as np

from .sample_model import InputError, SampleBag

_LOGLIK = re.compile(r"^loglik_(\d+)$")
_SPECIAL = ("log_density", "log_prior")


def fmt(value) -> str:
    """Text form of one output cell; floats get 17 significant digits."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".17g")
    return str(value)


def read_numeric_csv(path: str) -> tuple[list[str], np.ndarray]:
    """Header and m x k float matrix of a CSV file, with strict shape checks."""
    try:
        handle = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc.strerror}") from None
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        if not header or any(h == "" for h in header):
            raise InputError(f"{path}: header has an empty column name")
        seen = set()
        for h in header:
            if h in seen:
                raise InputError(f"{path}: duplicate header column {h!r}")
            seen.add(h)
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(f"{path}: row {line_no} has {len(row)} fields, expected {len(header)}")
            values = []
            for col, cell in zip(header, row):
                try:
                    x = float(cell)
                except ValueError:
                    raise InputError(f"{path}: row {line_no} column {col!r}: non-numeric value {cell!r}") from None
                if not math.isfinite(x):
                    raise InputError(f"{path}: row {line_no} column {col!r}: non-finite value {cell!r}")
                values.append(x)
            rows.append(values)
    if not rows:
        raise InputError(f"{path}: no data rows")
    return header, np.array(rows, dtype=float)


def read_samples(path: str) -> SampleBag:
    """Samples file: parameter columns plus optional log_density, log_prior, loglik_1..n."""
    header, data = read_numeric_csv(path)
    loglik = sorted(
        ((int(m.group(1)), j) for j, h in enumerate(header) if (m := _LOGLIK.match(h))),
    )
    if loglik:
        numbers = [n for n, _ in loglik]
        if numbers != list(range(1, len(numbers) + 1)):
            raise InputError(f"{path}: loglik columns must be numbered loglik_1..loglik_{len(numbers)}")
    special = {h: j for j, h in enumerate(header) if h in _SPECIAL}
    used = set(special.values()) | {j for _, j in loglik}
    params = [j for j in range(len(header)) if j not in used]
    if not params:
        raise InputError(f"{path}: no parameter columns besides log_density/log_prior/loglik_*")
    return SampleBag(
        data[:, params],
        log_density=data[:, special["log_density"]] if "log_density" in special else None,
        log_lik_terms=data[:, [j for _, j in loglik]] if loglik else None,
        log_prior=data[:, special["log_prior"]] if "log_prior" in special else None,
        columns=tuple(header[j] for j in params),
    )


def read_losses(path: str) -> tuple[list[str], np.ndarray]:
    """Loss file: one column per action, header row of action labels."""
    return read_numeric_csv(path)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        # JSON has no infinities; keep them as strings rather than emit invalid JSON
        return value if math.isfinite(value) else fmt(value)
    return value


def write_json(path: str, payload: dict) -> None:
    with open(path, "w") as handle:
        json.dump(_jsonable(payload), handle, indent=2, sort_keys=True)
        handle.write("\n")


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def parse_grid(spec: Optional[str], name: str = "grid") -> Optional[np.ndarray]:
    """Parse ``start:stop:count:linear|log`` (or a comma-separated list of values).

    >>> parse_grid("0:1:3:linear").tolist()
    [0.0, 0.5, 1.0]
    >>> parse_grid("1:100:3:log").tolist()
    [1.0, 10.0, 100.0]
    """
    if spec is None:
        return None
    spec = spec.strip()
    if ":" not in spec:
        try:
            values = np.array([float(v) for v in spec.split(",") if v.strip()], dtype=float)
        except ValueError:
            raise InputError(f"{name}: cannot parse {spec!r}") from None
    else:
        parts = spec.split(":")
        if len(parts) != 4:
            raise InputError(f"{name}: expected start:stop:count:linear|log, got {spec!r}")
        try:
            start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError:
            raise InputError(f"{name}: cannot parse {spec!r}") from None
        scale = parts[3].strip().lower()
        if count < 1:
            raise InputError(f"{name}: count must be at least 1")
        if scale == "linear":
            values = np.linspace(start, stop, count)
        elif scale == "log":
            if not (start > 0 and stop > 0):
                raise InputError(f"{name}: log spacing needs positive endpoints")
            values = np.geomspace(start, stop, count)
            # geomspace can land a hair off the endpoints
            values[0], values[-1] = start, stop
        else:
            raise InputError(f"{name}: spacing must be 'linear' or 'log', got {parts[3]!r}")
    if values.size == 0 or not np.all(np.isfinite(values)):
        raise InputError(f"{name}: grid is empty or not finite")
    if values.size > 1 and np.any(np.diff(values) <= 0):
        raise InputError(f"{name}: grid must be strictly increasing")
    return values


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
