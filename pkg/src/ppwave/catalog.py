"""Built-in example metrics with their expected classification."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .expr import ZERO, VarSpace, add, const, mul, parse, var
from .metric import MetricSpec

__all__ = ["CatalogEntry", "get", "names", "list_entries", "UnknownEntryError"]

TWO_PI = 2 * math.pi


class UnknownEntryError(KeyError):
    pass


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    metric: MetricSpec
    parameters: dict
    expected: dict
    provenance: str
    summary: str = ""

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "summary": self.summary,
            "parameters": self.parameters,
            "expected": self.expected,
            "provenance": self.provenance,
            "metric_file": metric_file_text(self.metric),
        }


def metric_file_text(m: MetricSpec) -> str:
    from .metricfile import format_metric_file
    return format_metric_file(m)


def _all_periodic(n: int, include_v: bool = False) -> VarSpace:
    periods = {"u": TWO_PI, **{f"x{i + 1}": TWO_PI for i in range(n)}}
    if include_v:
        periods["v"] = TWO_PI
    return VarSpace.with_periods(n, periods)


def _minkowski(n: int = 2) -> CatalogEntry:
    n = int(n)
    m = MetricSpec.ppwave(VarSpace(n), ZERO)
    return CatalogEntry(
        "minkowski", m, {"n": n},
        {"pp_wave": True, "plane_wave": True, "cahen_wallach": False, "ricci_flat": True,
         "completeness": {"status": "Certified", "rule": "PLANE_WAVE"}},
        "flat space in null coordinates (H = 0)", "Minkowski space, H = 0")


def _torus_pp(n: int = 2, H: str | None = None, periods: float | None = None) -> CatalogEntry:
    n = int(n)
    per = TWO_PI if periods is None else float(periods)
    vs = VarSpace.with_periods(n, {"u": per, **{f"x{i + 1}": per for i in range(n)}})
    if H is None:
        H = "cos(x1) + 0.5*cos(x2)" if n >= 2 else "cos(x1)"
    m = MetricSpec.ppwave(vs, H)
    return CatalogEntry(
        "torus_pp", m, {"n": n, "H": H, "period": per},
        {"pp_wave": True, "plane_wave": False, "cahen_wallach": False, "ricci_flat": False,
         "completeness": {"status": "Certified", "rule": "COMPACT_PERIODIC"}},
        "complete pp-wave on the torus, H with non-vanishing third partial derivatives",
        "periodic pp-wave on a torus chart")


def _parse_matrix(S) -> np.ndarray:
    """Nested sequence or text like ``"1,0;0,-1"`` (rows separated by ';')."""
    if isinstance(S, str):
        rows = [r for r in S.split(";") if r.strip()]
        S = [[float(x) for x in r.replace(",", " ").split()] for r in rows]
    return np.atleast_2d(np.asarray(S, dtype=float))


def _cahen_wallach(S=None) -> CatalogEntry:
    S = np.diag([1.0, -1.0]) if S is None else _parse_matrix(S)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("S must be a square matrix")
    if not np.allclose(S, S.T, atol=0, rtol=0):
        raise ValueError("S must be symmetric")
    if not np.any(S):
        raise ValueError("S must be nonzero")
    n = S.shape[0]
    vs = VarSpace(n)
    H = ZERO
    for i in range(n):
        for j in range(i, n):
            c = S[i, j] if i == j else 2 * S[i, j]
            if c != 0:
                H = add(H, mul(const(c), mul(var(2 + i), var(2 + j))))
    m = MetricSpec.ppwave(vs, H)
    ricci_flat = abs(float(np.trace(S))) == 0.0
    return CatalogEntry(
        "cahen_wallach", m, {"S": S.tolist()},
        {"pp_wave": True, "plane_wave": True, "cahen_wallach": True, "ricci_flat": ricci_flat,
         "completeness": {"status": "Certified", "rule": "PLANE_WAVE"}},
        "Cahen-Wallach space, H = S_ij x^i x^j with constant symmetric S",
        "indecomposable Lorentzian symmetric space")


def _incomplete_recurrent(a=None) -> CatalogEntry:
    a = [1.0] if a is None else [float(x) for x in np.atleast_1d(_vec(a))]
    n = len(a)
    vs = _all_periodic(n, include_v=True)
    terms = " + ".join(f"{ai!r}*(cos(x{i + 1}) - 1)" for i, ai in enumerate(a))
    H = parse(f"-(sin(v) - ({terms}))", vs)
    m = MetricSpec.generalized(vs, H)
    return CatalogEntry(
        "incomplete_recurrent", m, {"a": a},
        {"pp_wave": False, "plane_wave": False, "cahen_wallach": False,
         "completeness": {"status": "NotCertified"}},
        "compact manifold with recurrent null field and an incomplete geodesic (ln t, 0, ..., 0)",
        "incomplete metric with v-dependent H")


def _bundle_chart(a=None, H: str = "cos(x1) + 0.5*cos(x2)") -> CatalogEntry:
    A = np.array([[0.0, 1.0], [-1.0, 0.0]]) if a is None else _parse_matrix(a)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("a must be a square matrix")
    if not np.array_equal(A, -A.T):
        raise ValueError("a must be antisymmetric")
    n = A.shape[0]
    vs = VarSpace(n)
    # mu_i = 1/2 sum_j a_ji x^j, so d(mu_i dx^i) = 1/2 a_ij dx^i ^ dx^j
    mu = []
    for i in range(n):
        e = ZERO
        for j in range(n):
            if A[j, i] != 0:
                e = add(e, mul(const(0.5 * A[j, i]), var(2 + j)))
        mu.append(e)
    m = MetricSpec.generalized(vs, parse(H, vs), mu)
    return CatalogEntry(
        "bundle_chart", m, {"a": A.tolist(), "H": H},
        {"pp_wave": True, "cahen_wallach": False},
        "local chart of a pp-wave on a circle bundle whose screen Z is not involutive",
        "generalized chart with connection form mu")


def _plane_wave_affine() -> CatalogEntry:
    vs = VarSpace(1)
    m = MetricSpec.ppwave(vs, "x1^2 + u*x1")
    return CatalogEntry(
        "plane_wave_affine", m, {},
        {"pp_wave": True, "plane_wave": True, "cahen_wallach": False, "ricci_flat": False,
         "completeness": {"status": "Certified", "rule": "PLANE_WAVE"}},
        "plane wave with linear part, input for the normal form", "H = x1^2 + u*x1")


def _harmonic_cubic() -> CatalogEntry:
    vs = VarSpace(2)
    m = MetricSpec.ppwave(vs, "x1^3 - 3*x1*x2^2")
    return CatalogEntry(
        "harmonic_cubic", m, {},
        {"pp_wave": True, "plane_wave": False, "cahen_wallach": False, "ricci_flat": True,
         "completeness": {"status": "NotCertified"}},
        "harmonic function without bounded second derivatives",
        "Ricci-flat pp-wave that is not a plane wave")


def _vec(a):
    if isinstance(a, str):
        return [float(x) for x in a.replace(";", ",").split(",") if x.strip()]
    return a


_BUILDERS: dict[str, Callable[..., CatalogEntry]] = {
    "minkowski": _minkowski,
    "torus_pp": _torus_pp,
    "cahen_wallach": _cahen_wallach,
    "incomplete_recurrent": _incomplete_recurrent,
    "bundle_chart": _bundle_chart,
    "plane_wave_affine": _plane_wave_affine,
    "harmonic_cubic": _harmonic_cubic,
}


def names() -> list[str]:
    return list(_BUILDERS)


def get(name: str, **params) -> CatalogEntry:
    """Construct a catalog entry; raises UnknownEntryError or ValueError."""
    try:
        build = _BUILDERS[name]
    except KeyError:
        raise UnknownEntryError(f"unknown catalog entry {name!r}; known: {', '.join(_BUILDERS)}") from None
    try:
        return build(**params)
    except TypeError as exc:
        raise ValueError(f"invalid parameters for {name}: {exc}") from None


def list_entries() -> list[CatalogEntry]:
    return [get(n) for n in _BUILDERS]
