"""Plane-wave normal form: remove the linear and constant parts of H.

For H = a_ij(u) x^i x^j + b_i(u) x^i + c(u) the coordinate change

    x~ = x + beta(u),   v~ = v - beta'(u).x + gamma(u),   u~ = u

carries 2du(dv + H du) + dx^2 to 2du~(dv~ + a_ij x~^i x~^j du~) + dx~^2 exactly
when

    beta''  = 2 a beta - b,
    gamma'  = c - |beta'|^2 / 2 - beta.a.beta,

with beta(0) = beta'(0) = 0 and gamma(0) = 0.  The a-terms vanish when a = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .expr import (Expr, VarSpace, ZERO, add, compile_exprs, const, diff, free_vars,
                   mul, to_poly, var)
from .geodesic import GeodesicState, geodesic_rhs, integrate
from .metric import MetricSpec, PreconditionError, christoffel
from .ode import IntegratorOpts, NumericFailure, OdeRun, integrate_system

__all__ = ["PlaneWaveDecomposition", "NormalizationResult", "decompose",
           "normalize_plane_wave", "NormalizeOpts"]


@dataclass(frozen=True)
class PlaneWaveDecomposition:
    """H = a_ij x^i x^j + b_i x^i + c with Exprs in u only."""

    vs: VarSpace
    a: tuple  # n x n, symmetric
    b: tuple
    c: Expr

    @property
    def n(self) -> int:
        return self.vs.n

    def reconstruct(self) -> Expr:
        n = self.n
        H = self.c
        for i in range(n):
            H = add(H, mul(self.b[i], var(2 + i)))
            for j in range(n):
                H = add(H, mul(self.a[i][j], mul(var(2 + i), var(2 + j))))
        return H

    def quadratic_part(self) -> Expr:
        n = self.n
        H = ZERO
        for i in range(n):
            for j in range(i, n):
                coef = self.a[i][i] if i == j else mul(const(2.0), self.a[i][j])
                H = add(H, mul(coef, mul(var(2 + i), var(2 + j))))
        return H


def decompose(H: Expr, vs: VarSpace) -> PlaneWaveDecomposition:
    """Split a polynomial of degree at most 2 in x into (a, b, c)."""
    n = vs.n
    poly = to_poly(H, n)
    if poly is None:
        raise PreconditionError("H is not polynomial in x with u-only coefficients")
    a = [[ZERO] * n for _ in range(n)]
    b = [ZERO] * n
    c = ZERO
    for mono, coef in poly.items():
        deg = sum(mono)
        if deg > 2:
            raise PreconditionError(f"H has degree {deg} in x; a plane wave needs degree <= 2")
        idx = [i for i in range(n) for _ in range(mono[i])]
        if deg == 0:
            c = coef
        elif deg == 1:
            b[idx[0]] = coef
        elif idx[0] == idx[1]:
            a[idx[0]][idx[0]] = coef
        else:
            half = mul(const(0.5), coef)
            a[idx[0]][idx[1]] = a[idx[1]][idx[0]] = half
    return PlaneWaveDecomposition(vs, tuple(tuple(r) for r in a), tuple(b), c)


@dataclass(frozen=True)
class NormalizeOpts:
    rtol: float = 1e-12
    atol: float = 1e-14
    max_step: float = 1e-3
    n_check: int = 100
    seed: int = 0
    half_width: float = 1.0


@dataclass
class NormalizationResult:
    decomposition: PlaneWaveDecomposition
    u: np.ndarray
    beta: np.ndarray  # (samples, n)
    dbeta: np.ndarray
    gamma: np.ndarray
    H_normalized: Expr
    residuals: dict
    runs: dict = field(repr=False, default_factory=dict)

    def _run(self, u: float) -> OdeRun:
        return self.runs["forward"] if u >= 0 or "backward" not in self.runs else self.runs["backward"]

    def beta_at(self, u: float) -> np.ndarray:
        n = self.decomposition.n
        return self._run(u).dense(float(u))[0][:n]

    def gamma_at(self, u: float) -> float:
        n = self.decomposition.n
        return float(self._run(u).dense(float(u))[0][2 * n])

    def maps(self, p):
        """Image of (u, v, x) in the normal-form coordinates."""
        n = self.decomposition.n
        u, v, x = p[0], p[1], np.asarray(p[2:])
        y, _ = self._run(u).dense(float(u))
        beta, dbeta, gamma = y[:n], y[n:2 * n], y[2 * n]
        return np.concatenate([[u, v - dbeta @ x + gamma], x + beta])


def _programs(d: PlaneWaveDecomposition):
    n = d.n
    a_upper = [d.a[i][j] for i in range(n) for j in range(i, n)]
    for e in (*a_upper, *d.b, d.c):
        if free_vars(e) - {0}:
            raise PreconditionError("decomposition coefficients must depend on u only")
    return compile_exprs([*a_upper, *d.b, d.c])


def _sym(vals, n):
    A = np.empty((n, n))
    k = 0
    for i in range(n):
        for j in range(i, n):
            A[i, j] = A[j, i] = vals[k]
            k += 1
    return A


def normalize_plane_wave(d: PlaneWaveDecomposition, u_span, opts: NormalizeOpts | None = None,
                         geodesic_check: bool = True) -> NormalizationResult:
    opts = opts or NormalizeOpts()
    u0, u1 = (float(x) for x in u_span)
    if not (u0 <= 0.0 <= u1) or u0 == u1:
        raise ValueError(f"u_span must contain 0 and have positive length, got {u_span!r}")
    n = d.n
    progs = _programs(d)
    iopts = IntegratorOpts(rtol=opts.rtol, atol=opts.atol, max_step=opts.max_step,
                           max_steps=10_000_000)
    y0 = np.zeros(2 * n + 1)
    runs = {}
    for key, end in (("backward", u0), ("forward", u1)):
        if end == 0.0:
            continue
        run = integrate_system(kernels.K_NORMALIZE, progs, np.zeros(1), n, y0, 0.0, end, iopts)
        if not run.verdict.completed:
            raise NumericFailure(f"normalization ODE ended with {run.verdict.kind}",
                                 run.verdict.s_last, run.ys[-1])
        runs[key] = run
    parts = []
    if "backward" in runs:
        parts.append(runs["backward"].ys[::-1])
        us = [runs["backward"].ts[::-1]]
    else:
        us = []
    if "forward" in runs:
        f = runs["forward"]
        parts.append(f.ys[1:] if parts else f.ys)
        us.append(f.ts[1:] if us else f.ts)
    ys = np.concatenate(parts)
    u = np.concatenate(us)
    Hn = d.quadratic_part()
    res = NormalizationResult(d, u, ys[:, :n], ys[:, n:2 * n], ys[:, 2 * n], Hn, {}, runs)
    res.residuals["isometry"] = isometry_residual(res, (u0, u1), opts)
    if geodesic_check:
        res.residuals["geodesic"] = geodesic_residual(res, (u0, u1))
    return res


def _pp_metric(H_at_point: float, n: int) -> np.ndarray:
    g = np.eye(n + 2)
    g[0, 0] = 2 * H_at_point
    g[0, 1] = g[1, 0] = 1.0
    g[1, 1] = 0.0
    return g


def isometry_residual(res: NormalizationResult, u_span, opts: NormalizeOpts) -> float:
    """max |J^T g~(phi(p)) J - g(p)| over random points with u in ``u_span``.

    beta', beta'' and gamma' are taken as derivatives of the interpolants, so
    the check does not assume the ODEs.
    """
    d = res.decomposition
    n = d.n
    rng = np.random.default_rng(opts.seed)
    pts = rng.uniform(-opts.half_width, opts.half_width, size=(opts.n_check, n + 2))
    pts[:, 0] = rng.uniform(u_span[0], u_span[1], size=opts.n_check)
    H = compile_exprs([d.reconstruct()])
    Hn = compile_exprs([res.H_normalized])
    worst = 0.0
    for p in pts:
        u = p[0]
        y, dy = res._run(u).dense(float(u))
        beta, dbeta_i, gamma = y[:n], dy[:n], y[2 * n]
        ddbeta = dy[n:2 * n]
        dgamma = dy[2 * n]
        x = p[2:]
        q = np.concatenate([[u, p[1] - dbeta_i @ x + gamma], x + beta])
        J = np.eye(n + 2)
        J[1, 0] = -ddbeta @ x + dgamma
        J[1, 2:] = -dbeta_i
        J[2:, 0] = dbeta_i
        pulled = J.T @ _pp_metric(Hn.eval(q)[0], n) @ J
        g = _pp_metric(H.eval(p)[0], n)
        worst = max(worst, float(np.max(np.abs(pulled - g))))
    return worst


def geodesic_residual(res: NormalizationResult, u_span, samples: int = 50) -> float:
    """Geodesic-equation residual, in the normal form, of a mapped geodesic of g^H."""
    d = res.decomposition
    n = d.n
    vs = d.vs
    mH = MetricSpec.ppwave(vs, d.reconstruct())
    mN = MetricSpec.ppwave(vs, res.H_normalized)
    x0 = np.linspace(0.1, 0.2, n)
    st0 = GeodesicState(np.concatenate([[0.0, 0.0], x0]),
                        np.concatenate([[1.0, 0.3], -0.1 * np.ones(n)]))
    geo = integrate(mH, st0, u_span, IntegratorOpts(rtol=1e-12, atol=1e-14))
    # coefficient derivatives for beta''' and gamma''
    a_up = [d.a[i][j] for i in range(n) for j in range(i, n)]
    dprog = compile_exprs([*(diff(e, 0) for e in a_up), *(diff(e, 0) for e in d.b), diff(d.c, 0)])
    cprog = _programs(d)
    worst = 0.0
    # integrator nodes carry the accurate state; acceleration from the equation
    idx = np.unique(np.linspace(1, len(geo.s) - 2, samples).astype(int))
    for k in idx:
        pos, vel = geo.positions[k], geo.velocities[k]
        _, acc = geodesic_rhs(mH, GeodesicState(pos, vel))
        u, du, ddu = pos[0], vel[0], acc[0]
        x, dx, ddx = pos[2:], vel[2:], acc[2:]
        y, _ = res._run(u).dense(float(u))
        beta, b1, gamma = y[:n], y[n:2 * n], y[2 * n]
        pu = np.zeros(n + 2)
        pu[0] = u
        cv = cprog.eval(pu)
        dv = dprog.eval(pu)
        k = n * (n + 1) // 2
        A, Ap = _sym(cv[:k], n), _sym(dv[:k], n)
        b, bp = cv[k:k + n], dv[k:k + n]
        c, cp = cv[k + n], dv[k + n]
        b2 = 2 * A @ beta - b
        b3 = 2 * Ap @ beta + 2 * A @ b1 - bp
        g1 = c - 0.5 * b1 @ b1 - beta @ A @ beta
        g2 = cp - b1 @ b2 - 2 * b1 @ A @ beta - beta @ Ap @ beta
        q = np.concatenate([[u, pos[1] - b1 @ x + gamma], x + beta])
        qd = np.concatenate([[du, vel[1] - du * (b2 @ x) - b1 @ dx + g1 * du], dx + b1 * du])
        qdd_v = (acc[1] - ddu * (b2 @ x) - du * du * (b3 @ x) - 2 * du * (b2 @ dx)
                 - b1 @ ddx + g2 * du * du + g1 * ddu)
        qdd = np.concatenate([[ddu, qdd_v], ddx + b2 * du * du + b1 * ddu])
        Gam = christoffel(mN, q).gamma
        r = qdd + np.einsum("lab,a,b->l", Gam, qd, qd)
        worst = max(worst, float(np.max(np.abs(r))))
    return worst
