"""Metric file format (``key = value`` lines, '#' comments) and JSON output."""

from __future__ import annotations

import json
import math
import re
from pathlib import Path

from .expr import ONE, ZERO, VarSpace, parse, to_text, var_name
from .metric import MetricSpec

__all__ = ["MetricFileError", "parse_metric_file", "read_metric_file", "format_metric_file",
           "dumps", "clean_floats"]


class MetricFileError(ValueError):
    pass


_KEY = re.compile(r"^(n|form|H|periodic|mu\d+|g\d+)$")


def parse_metric_file(text: str) -> MetricSpec:
    fields: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise MetricFileError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not _KEY.match(key):
            raise MetricFileError(f"line {lineno}: unknown key {key!r}")
        if key in fields:
            raise MetricFileError(f"line {lineno}: duplicate key {key!r}")
        fields[key] = value
    try:
        n = int(fields["n"])
    except KeyError:
        raise MetricFileError("missing key 'n'") from None
    except ValueError:
        raise MetricFileError(f"n must be an integer, got {fields['n']!r}") from None
    form = fields.get("form", "ppwave")
    periods = {}
    if fields.get("periodic"):
        for item in fields["periodic"].split(","):
            name, _, val = item.partition(":")
            try:
                periods[name.strip()] = float(val)
            except ValueError:
                raise MetricFileError(f"bad period entry {item!r}") from None
    try:
        vs = VarSpace.with_periods(n, periods)
    except (ValueError, KeyError) as exc:
        raise MetricFileError(str(exc)) from None
    if "H" not in fields:
        raise MetricFileError("missing key 'H'")
    if form == "ppwave":
        extra = [k for k in fields if k.startswith(("mu", "g"))]
        if extra:
            raise MetricFileError(f"keys {extra} are only valid with form = generalized")
        return MetricSpec.ppwave(vs, parse(fields["H"], vs))
    if form != "generalized":
        raise MetricFileError(f"form must be ppwave or generalized, got {form!r}")
    mu = [parse(fields.get(f"mu{i + 1}", "0"), vs) for i in range(n)]
    ghat = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            key = f"g{i + 1}{j + 1}" if n < 10 else None
            alt = f"g{j + 1}{i + 1}"
            txt = fields.get(key) or fields.get(alt)
            ghat[i][j] = parse(txt, vs) if txt is not None else (ONE if i == j else ZERO)
    return MetricSpec.generalized(vs, parse(fields["H"], vs), mu, ghat)


def read_metric_file(path) -> MetricSpec:
    return parse_metric_file(Path(path).read_text())


def format_metric_file(m: MetricSpec) -> str:
    lines = [f"n = {m.n}", f"form = {m.form}", f"H = {to_text(m.H)}"]
    if m.form == "generalized":
        for i, e in enumerate(m.mu):
            lines.append(f"mu{i + 1} = {to_text(e)}")
        for i in range(m.n):
            for j in range(i, m.n):
                lines.append(f"g{i + 1}{j + 1} = {to_text(m.ghat[i][j])}")
    per = [f"{var_name(c)}:{m.vs.period(c)!r}" for c in range(m.dim) if m.vs.is_periodic(c)]
    if per:
        lines.append("periodic = " + ", ".join(per))
    return "\n".join(lines) + "\n"


def clean_floats(obj):
    """Replace non-finite floats by None and numpy scalars by Python ones."""
    if isinstance(obj, dict):
        return {k: clean_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_floats(v) for v in obj]
    if hasattr(obj, "tolist") and not isinstance(obj, (str, bytes)):
        return clean_floats(obj.tolist())
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    return obj


def dumps(obj) -> str:
    """Deterministic JSON: insertion field order, repr floats, trailing newline."""
    return json.dumps(clean_floats(obj), indent=2, allow_nan=False) + "\n"
