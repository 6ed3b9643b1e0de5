"""pp-wave / plane-wave / Cahen-Wallach / Ricci-flat flags and completeness certificates."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .expr import (Expr, ZERO, add, compile_exprs, diff, free_vars, is_const, is_zero,
                   poly_degree_in_x, to_poly, to_text, var_name)
from .metric import (MetricSpec, PreconditionError, christoffel, curvature, ricci,
                     sample_points)

__all__ = [
    "ClassifyOpts", "Check", "Completeness", "ClassificationReport", "classify",
    "completeness_certificate", "structurally_bounded", "cahen_wallach_matrix",
    "RULES",
]

RULES = ("PLANE_WAVE", "COMPACT_PERIODIC", "BOUNDED_HESSIAN", "QUADRATIC_GROWTH_U_INDEP")

COMPACT_NOTE = ("compactness is modelled by declared periodicity of every chart "
                "coordinate; descent to a compact quotient is not checked")


@dataclass(frozen=True)
class ClassifyOpts:
    n_samples: int = 200
    tol: float = 1e-9
    seed: int = 0
    half_width: float = 2.0

    def __post_init__(self):
        if self.n_samples < 1 or not self.tol > 0:
            raise ValueError("n_samples must be positive and tol > 0")


@dataclass(frozen=True)
class Check:
    ok: bool
    residual: float | None
    mode: str = "sampled"  # symbolic | sampled | not_assessed

    def to_json(self, with_mode: bool = True) -> dict:
        out = {"ok": self.ok, "residual": self.residual}
        if with_mode:
            out["mode"] = self.mode
        return out


@dataclass(frozen=True)
class Completeness:
    status: str  # Certified | NotCertified | KnownIncomplete
    rule: str | None = None
    reason: str | None = None
    witness: str | None = None
    note: str | None = None

    def to_json(self) -> dict:
        out = {"status": self.status}
        for key in ("rule", "reason", "witness", "note"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        return out


@dataclass(frozen=True)
class ClassificationReport:
    pp_wave: Check
    plane_wave: Check
    cahen_wallach: bool
    S: np.ndarray | None
    ricci_flat: Check
    completeness: Completeness
    extras: dict = field(default_factory=dict)

    @property
    def is_pp_wave(self) -> bool:
        return self.pp_wave.ok

    @property
    def is_plane_wave(self) -> bool:
        return self.plane_wave.ok

    @property
    def is_cahen_wallach(self) -> bool:
        return self.cahen_wallach

    @property
    def is_ricci_flat(self) -> bool:
        return self.ricci_flat.ok

    def with_completeness(self, c: Completeness) -> "ClassificationReport":
        return ClassificationReport(self.pp_wave, self.plane_wave, self.cahen_wallach,
                                    self.S, self.ricci_flat, c, self.extras)

    def to_json(self) -> dict:
        cw = {"ok": self.cahen_wallach}
        if self.S is not None:
            cw["S"] = [[float(x) for x in row] for row in self.S]
        return {
            "pp_wave": self.pp_wave.to_json(with_mode=False),
            "plane_wave": self.plane_wave.to_json(),
            "cahen_wallach": cw,
            "ricci_flat": self.ricci_flat.to_json(),
            "completeness": self.completeness.to_json(),
        }


# ------------------------------------------------------------ structural

def structurally_bounded(e: Expr) -> bool:
    """True when ``e`` is bounded on all of R^(n+2) by construction.

    Constants and sin/cos of anything are bounded; sums, products, negation,
    non-negative integer powers and exp preserve boundedness.
    """
    op = e.op
    if op == "const":
        return True
    if op in ("sin", "cos"):
        return True
    if op in ("add", "mul"):
        return all(structurally_bounded(a) for a in e.args)
    if op in ("neg", "exp"):
        return structurally_bounded(e.args[0])
    if op == "pow":
        return int(e.value) >= 0 and structurally_bounded(e.args[0])
    return False


def _x_hessian(m: MetricSpec) -> list[Expr]:
    n = m.n
    return [diff(diff(m.H, 2 + i), 2 + j) for i in range(n) for j in range(i, n)]


def _third_derivs(m: MetricSpec) -> list[Expr]:
    n = m.n
    return [diff(diff(diff(m.H, 2 + i), 2 + j), 2 + k)
            for i, j, k in itertools.combinations_with_replacement(range(n), 3)]


def _laplacian(m: MetricSpec) -> Expr:
    out = ZERO
    for i in range(m.n):
        out = add(out, diff(diff(m.H, 2 + i), 2 + i))
    return out


def cahen_wallach_matrix(m: MetricSpec) -> np.ndarray | None:
    """S with H = S_ij x^i x^j when H is a constant-coefficient quadratic form."""
    if not m.is_ppwave:
        return None
    poly = to_poly(m.H, m.n)
    if poly is None:
        return None
    n = m.n
    S = np.zeros((n, n))
    for mono, coef in poly.items():
        if sum(mono) != 2 or not is_const(coef):
            return None
        idx = [i for i in range(n) for _ in range(mono[i])]
        i, j = idx
        if i == j:
            S[i, i] = coef.value
        else:
            S[i, j] = S[j, i] = coef.value / 2
    if not np.any(S):
        return None
    return S


def _periods_consistent(m: MetricSpec, pts: np.ndarray, tol: float) -> float:
    """Largest change of H under a shift by one declared period."""
    prog = compile_exprs([m.H])
    base = prog.eval_batch(pts)[:, 0]
    worst = 0.0
    for c in range(m.dim):
        per = m.vs.period(c)
        if per is None:
            continue
        shifted = pts.copy()
        shifted[:, c] += per
        worst = max(worst, float(np.max(np.abs(prog.eval_batch(shifted)[:, 0] - base))))
    return worst


# --------------------------------------------------------------- checks

def _pp_check(m: MetricSpec, pts: np.ndarray, tol: float) -> Check:
    if 1 in free_vars(m.H):
        return Check(False, None, "symbolic")
    N = m.dim
    worst = 0.0
    for p in pts:
        if not m.is_ppwave:
            # parallel null field: Gamma^l_{a v} = 0
            worst = max(worst, float(np.max(np.abs(christoffel(m, p).gamma[:, :, 1]))))
        R = curvature(m, p).R
        worst = max(worst, float(np.max(np.abs(R[1:N, 1:N]))))
    return Check(worst <= tol, worst)


def _plane_check(m: MetricSpec, pts: np.ndarray, tol: float) -> Check:
    if not m.is_ppwave:
        return Check(False, None, "not_assessed")
    thirds = _third_derivs(m)
    if all(is_zero(e) for e in thirds):
        return Check(True, 0.0, "symbolic")
    vals = compile_exprs(thirds).eval_batch(pts)
    worst = float(np.max(np.abs(vals)))
    deg = poly_degree_in_x(m.H, m.n)
    ok = deg is not None and deg <= 2
    return Check(ok, worst, "symbolic" if deg is not None else "sampled")


def _ricci_check(m: MetricSpec, pts: np.ndarray, tol: float) -> Check:
    if m.is_ppwave:
        lap = _laplacian(m)
        poly = to_poly(lap, m.n)
        if is_zero(lap) or poly == {}:
            return Check(True, 0.0, "symbolic")
        vals = compile_exprs([lap]).eval_batch(pts)[:, 0]
        worst = float(np.max(np.abs(vals)))
        if poly is not None and all(is_const(c) for c in poly.values()):
            return Check(False, worst, "symbolic")
        return Check(worst <= tol, worst, "sampled")
    worst = max(float(np.max(np.abs(ricci(m, p)))) for p in pts)
    return Check(worst <= tol, worst, "sampled")


def completeness_certificate(m: MetricSpec, opts: ClassifyOpts | None = None,
                             plane_wave: bool | None = None) -> Completeness:
    """First applicable rule among PLANE_WAVE, COMPACT_PERIODIC,
    BOUNDED_HESSIAN and QUADRATIC_GROWTH_U_INDEP."""
    opts = opts or ClassifyOpts()
    if not m.is_ppwave:
        raise PreconditionError("completeness certificates are only issued for pp-wave metrics")
    failures = []
    deg = poly_degree_in_x(m.H, m.n)
    if plane_wave is None:
        plane_wave = deg is not None and deg <= 2
    if plane_wave:
        return Completeness("Certified", rule="PLANE_WAVE")
    failures.append("not a plane wave (H not quadratic in x)")

    vs = m.vs
    missing = [var_name(c) for c in range(vs.dim) if c != 1 and not vs.is_periodic(c)]
    if missing:
        failures.append(f"not compact: {', '.join(missing)} not declared periodic")
    else:
        rng = np.random.default_rng(opts.seed)
        pts = sample_points(vs, opts.n_samples, rng, opts.half_width)
        drift = _periods_consistent(m, pts, opts.tol)
        if drift <= 1e-9 * (1 + float(np.max(np.abs(compile_exprs([m.H]).eval_batch(pts))))):
            return Completeness("Certified", rule="COMPACT_PERIODIC", note=COMPACT_NOTE)
        failures.append(f"H is not periodic with the declared periods (mismatch {drift:.3g})")

    if all(structurally_bounded(e) for e in _x_hessian(m)):
        return Completeness("Certified", rule="BOUNDED_HESSIAN")
    failures.append("unbounded Hessian (no structural bound on d_i d_j H)")

    if 0 in free_vars(m.H):
        failures.append("H depends on u")
    elif deg is not None and deg <= 2 or structurally_bounded(m.H):
        return Completeness("Certified", rule="QUADRATIC_GROWTH_U_INDEP")
    else:
        failures.append("not quadratic (growth in x not bounded by a quadratic)")
    return Completeness("NotCertified", reason="; ".join(failures))


def classify(m: MetricSpec, opts: ClassifyOpts | None = None) -> ClassificationReport:
    opts = opts or ClassifyOpts()
    rng = np.random.default_rng(opts.seed)
    pts = sample_points(m.vs, opts.n_samples, rng, opts.half_width)
    pp = _pp_check(m, pts, opts.tol)
    plane = _plane_check(m, pts, opts.tol) if pp.ok else Check(False, None, "not_assessed")
    if m.is_ppwave and not pp.ok:
        plane = _plane_check(m, pts, opts.tol)
        plane = Check(False, plane.residual, plane.mode)
    S = cahen_wallach_matrix(m) if plane.ok else None
    ric = _ricci_check(m, pts, opts.tol)
    if m.is_ppwave and pp.ok:
        comp = completeness_certificate(m, opts, plane_wave=plane.ok)
    elif not pp.ok:
        comp = Completeness("NotCertified", reason="not a pp-wave; certificates apply to pp-waves only")
    else:
        comp = Completeness("NotCertified",
                            reason="generalized form; certificates are issued for the pp-wave form only")
    extras = {"H": to_text(m.H)}
    return ClassificationReport(pp, plane, S is not None, S, ric, comp, extras)
