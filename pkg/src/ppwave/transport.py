"""Parallel transport, loop holonomy, screen diagnostics and the Jacobi check.

Holonomy matrices use the frame order (d_v, d_1..d_n, d_u); vectors passed to
and returned from the transport routines use coordinate order (u, v, x).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expr import ONE, Expr, ZERO, compile_exprs, diff, neg
from .geodesic import GeodesicState, _kind, geodesic_rhs, integrate
from .metric import (MetricSpec, PreconditionError, SingularMetricError,
                     christoffel, metric_at)
from .ode import IntegratorOpts, NumericFailure, integrate_system

__all__ = [
    "LoopSpec", "HolonomyElement", "parallel_transport", "transport_polyline",
    "loop_holonomy", "holonomy_membership", "screen_diagnostics",
    "jacobi_property_check", "jacobi_residual", "frame_permutation",
    "curvature_operator", "read_loop_csv", "loop_shrinking", "standard_screen",
]

_TRANSPORT_OPTS = IntegratorOpts(rtol=1e-12, atol=1e-14)
_ROUNDOFF = 1e-9


def frame_permutation(N: int) -> np.ndarray:
    """Coordinate index of each frame slot (d_v, d_1..d_n, d_u)."""
    return np.array([1] + list(range(2, N)) + [0])


def to_frame(A: np.ndarray) -> np.ndarray:
    """Re-express a coordinate-basis matrix in the (d_v, d_i, d_u) frame."""
    perm = frame_permutation(A.shape[0])
    return A[np.ix_(perm, perm)]


@dataclass(frozen=True)
class LoopSpec:
    """Closed polyline in coordinates.

    Build with :meth:`rectangle`, :meth:`polyline` or :meth:`sampled`.
    """

    vertices: np.ndarray
    description: str = ""

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or len(v) < 3:
            raise ValueError("a loop needs at least three vertices")
        if np.max(np.abs(v[0] - v[-1])) > 1e-12:
            raise ValueError("loop is not closed: first and last points differ")
        object.__setattr__(self, "vertices", v)

    @property
    def base_point(self) -> np.ndarray:
        return self.vertices[0]

    @classmethod
    def rectangle(cls, plane: tuple[int, int], eps: float, base, names=None) -> "LoopSpec":
        """Counterclockwise in the (a, b) plane: +a, +b, -a, -b from ``base``."""
        a, b = plane
        if a == b:
            raise ValueError("rectangle needs two distinct coordinates")
        p0 = np.asarray(base, dtype=float)
        ea = np.zeros_like(p0); ea[a] = eps
        eb = np.zeros_like(p0); eb[b] = eps
        verts = [p0, p0 + ea, p0 + ea + eb, p0 + eb, p0.copy()]
        label = f"rect:a={names[0]},b={names[1]},eps={eps!r}" if names else f"rect({a},{b},{eps!r})"
        return cls(np.array(verts), label)

    @classmethod
    def polyline(cls, vertices, closed: bool = True, description: str = "polyline") -> "LoopSpec":
        v = np.asarray(vertices, dtype=float)
        if closed and np.max(np.abs(v[0] - v[-1])) > 1e-12:
            v = np.vstack([v, v[:1]])
        return cls(v, description)

    @classmethod
    def sampled(cls, points, description: str = "sampled") -> "LoopSpec":
        return cls(np.asarray(points, dtype=float), description)

    def reversed(self) -> "LoopSpec":
        return LoopSpec(self.vertices[::-1].copy(), self.description + " (reversed)")


def read_loop_csv(path, names: Sequence[str]) -> LoopSpec:
    """Read loop vertices from CSV with one column per coordinate name."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError("loop CSV has no rows")
    missing = [c for c in names if c not in rows[0]]
    if missing:
        raise ValueError(f"loop CSV lacks columns {missing}")
    pts = np.array([[float(r[c]) for c in names] for r in rows])
    return LoopSpec.sampled(pts, f"csv:{path}")


def transport_polyline(m: MetricSpec, vertices, vectors, method: str = "auto",
                       opts: IntegratorOpts | None = None) -> np.ndarray:
    """Transport the rows of ``vectors`` along the polyline through ``vertices``."""
    opts = opts or _TRANSPORT_OPTS
    N = m.dim
    kind, progs = _kind(m, method, transport=True)
    X = np.array(vectors, dtype=float).reshape(-1, N)
    verts = np.asarray(vertices, dtype=float)
    for p0, p1 in zip(verts[:-1], verts[1:]):
        d = p1 - p0
        if not np.any(d):
            continue
        params = np.concatenate([p0, d])
        try:
            run = integrate_system(kind, progs, params, m.n, X.ravel(), 0.0, 1.0, opts,
                                   record=False)
        except NumericFailure as exc:
            raise SingularMetricError(str(exc), p0 + exc.s * d) from exc
        if not run.verdict.completed:
            raise SingularMetricError(f"transport failed ({run.verdict.kind})", p0)
        X = run.ys[-1].reshape(-1, N)
    return X


def parallel_transport(m: MetricSpec, curve, X0, method: str = "auto",
                       opts: IntegratorOpts | None = None) -> np.ndarray:
    """Parallel-transport ``X0`` along a curve.

    ``curve`` is a vertex array (polyline) or a :class:`GeodesicState` with a
    parameter span, given as ``(state, (s0, s1))``; geodesics are integrated
    together with the vector.
    """
    X0 = np.asarray(X0, dtype=float)
    if isinstance(curve, tuple) and isinstance(curve[0], GeodesicState):
        st, (s0, s1) = curve
        res = integrate(m, st, (min(0.0, s0, s1), max(0.0, s0, s1)),
                        opts or _TRANSPORT_OPTS, method, transport=X0.reshape(-1, m.dim))
        end = s1 if s1 != 0 else s0
        y, _ = res.dense_state(end)
        return y[2 * m.dim:].reshape(X0.shape)
    out = transport_polyline(m, curve, X0.reshape(-1, m.dim), method, opts)
    return out.reshape(X0.shape)


@dataclass(frozen=True)
class HolonomyElement:
    base_point: np.ndarray
    matrix: np.ndarray  # frame order (d_v, d_1..d_n, d_u)
    loop: str = ""
    metric_frame: np.ndarray = field(default=None, repr=False)

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.matrix))

    def metric_preservation(self) -> float:
        g = self.metric_frame
        M = self.matrix
        return float(np.max(np.abs(M.T @ g @ M - g)))


def loop_holonomy(m: MetricSpec, loop: LoopSpec, method: str = "auto",
                  opts: IntegratorOpts | None = None) -> HolonomyElement:
    """Transport the coordinate frame once around ``loop``."""
    N = m.dim
    perm = frame_permutation(N)
    frame = np.eye(N)[perm]  # rows: d_v, d_1..d_n, d_u in coordinates
    out = transport_polyline(m, loop.vertices, frame, method, opts)
    # column k of M: transported frame vector k in frame components
    M = out[:, perm].T
    g, _ = metric_at(m, loop.base_point)
    return HolonomyElement(loop.base_point.copy(), M, loop.description, to_frame(g))


def curvature_operator(m: MetricSpec, p, a: int, b: int) -> np.ndarray:
    """Matrix of X -> R(d_a, d_b) X in frame order."""
    from .metric import curvature

    R = curvature(m, p, method="generic").R
    _, ginv = metric_at(m, p)
    # (R(d_a, d_b) d_s)^l = ginv[l, r] R[a, b, s, r]
    K = np.einsum("lr,sr->ls", ginv, R[a, b])
    return to_frame(K)


def holonomy_membership(h: HolonomyElement, tol: float = 1e-8) -> dict:
    """Residuals for membership of ``h`` in the null-translation group R^n."""
    M = h.matrix
    N = M.shape[0]
    e_v = np.zeros(N); e_v[0] = 1.0
    fixes_v = float(np.max(np.abs(M[:, 0] - e_v)))
    middle = float(np.max(np.abs(M[1:N - 1, 1:N - 1] - np.eye(N - 2))))
    # upper-triangular shape: nothing below the block diagonal, d_u scaled by 1/a
    lower = np.concatenate([M[1:, 0], M[N - 1, 1:N - 1]])
    triangular = float(max(np.max(np.abs(lower)), abs(M[N - 1, N - 1] * M[0, 0] - 1.0)))
    residuals = {
        "fixes_V": fixes_v,
        "middle_block": middle,
        "metric_preservation": h.metric_preservation() if h.metric_frame is not None else 0.0,
        "triangular": triangular,
    }
    member = all(v <= tol for v in residuals.values())
    return {"residuals": residuals, "member_Rn": member, "det": h.det}


# ----------------------------------------------------------------- screens

def _lower(m: MetricSpec, Z: Sequence[Expr]) -> list[Expr]:
    g = m.components
    N = m.dim
    return [sum((g[a][b] * Z[b] for b in range(N)), ZERO) for a in range(N)]


def _inner(m: MetricSpec, A, B) -> Expr:
    g = m.components
    N = m.dim
    return sum((g[a][b] * A[a] * B[b] for a in range(N) for b in range(N)), ZERO)


def _christoffel_first(m: MetricSpec):
    """Gamma_{k a b} = 1/2 (d_a g_bk + d_b g_ak - d_k g_ab) as expressions."""
    g = m.components
    N = m.dim
    return [[[0.5 * (diff(g[b][k], a) + diff(g[a][k], b) - diff(g[a][b], k))
              for b in range(N)] for a in range(N)] for k in range(N)]


def _alpha(m: MetricSpec, Z, S, G1) -> list[Expr]:
    """Components alpha_c = g(nabla_c S, Z)."""
    N = m.dim
    zl = _lower(m, Z)
    out = []
    for c in range(N):
        e = sum((zl[l] * diff(S[l], c) for l in range(N)), ZERO)
        e = e + sum((G1[k][c][s] * Z[k] * S[s] for k in range(N) for s in range(N)), ZERO)
        out.append(e)
    return out


def _d(omega: Sequence[Expr]) -> list[list[Expr]]:
    """Exterior derivative: (d omega)_{ab} = d_a omega_b - d_b omega_a."""
    N = len(omega)
    return [[diff(omega[b], a) - diff(omega[a], b) for b in range(N)] for a in range(N)]


def screen_diagnostics(m: MetricSpec, Z: Sequence[Expr], S: Sequence[Sequence[Expr]],
                       points, frame_tol: float = 1e-8) -> dict:
    """Horizontality/involutivity residuals of the screen spanned by ``S``.

    ``Z`` and each ``S[i]`` are coordinate components (u, v, x).  Reports, as
    maxima over ``points``: alpha^i(V), alpha^i(S_j) - alpha^j(S_i), and the
    2-forms dZ^flat and d alpha^i on pairs from (V, S_1..S_n).
    """
    N, n = m.dim, m.n
    Z = list(Z)
    S = [list(s) for s in S]
    if len(Z) != N or len(S) != n or any(len(s) != N for s in S):
        raise ValueError(f"Z needs {N} components and S needs {n} fields of {N} components")
    V = [ZERO, ONE, *([ZERO] * n)]
    G1 = _christoffel_first(m)
    alphas = [_alpha(m, Z, S[i], G1) for i in range(n)]
    zflat = _lower(m, Z)
    dz = _d(zflat)
    dalphas = [_d(al) for al in alphas]
    frame_checks = [_inner(m, V, Z)] + [_inner(m, S[i], S[j]) for i in range(n) for j in range(i, n)]
    targets = [1.0] + [1.0 if i == j else 0.0 for i in range(n) for j in range(i, n)]

    pair_fields = [V] + S
    names = ["V"] + [f"S{i + 1}" for i in range(n)]
    res = {"alpha_V": 0.0, "alpha_involutivity": 0.0, "dZ_flat": 0.0, "d_alpha": 0.0}
    dz_pairs: dict = {}
    worst_frame = (0.0, None)
    prog_frame = compile_exprs(frame_checks)
    prog_alpha = compile_exprs([e for al in alphas for e in al])
    prog_dz = compile_exprs([e for row in dz for e in row])
    prog_da = compile_exprs([e for da in dalphas for row in da for e in row])
    prog_fields = compile_exprs([e for F in pair_fields for e in F])
    for p in np.asarray(points, dtype=float).reshape(-1, N):
        fv = prog_frame.eval_checked(p)
        dev = float(np.max(np.abs(fv - targets)))
        if dev > worst_frame[0]:
            worst_frame = (dev, p)
        al = prog_alpha.eval_checked(p).reshape(n, N)
        fields = prog_fields.eval_checked(p).reshape(n + 1, N)
        Vp, Sp = fields[0], fields[1:]
        res["alpha_V"] = max(res["alpha_V"], float(np.max(np.abs(al @ Vp))))
        A = al @ Sp.T  # A[i, j] = alpha^i(S_j)
        res["alpha_involutivity"] = max(res["alpha_involutivity"], float(np.max(np.abs(A - A.T))))
        dzm = prog_dz.eval_checked(p).reshape(N, N)
        pair = fields @ dzm @ fields.T
        res["dZ_flat"] = max(res["dZ_flat"], float(np.max(np.abs(pair))))
        for a in range(n + 1):
            for b in range(a + 1, n + 1):
                key = f"{names[a]},{names[b]}"
                dz_pairs[key] = max(dz_pairs.get(key, 0.0), abs(float(pair[a, b])))
        dam = prog_da.eval_checked(p).reshape(n, N, N)
        for i in range(n):
            res["d_alpha"] = max(res["d_alpha"], float(np.max(np.abs(fields @ dam[i] @ fields.T))))
    if worst_frame[0] > frame_tol:
        raise PreconditionError(
            f"screen frame violates g(V,Z)=1, g(S_i,S_j)=delta_ij by {worst_frame[0]:.3g} "
            f"at {list(worst_frame[1])}")
    return {"residuals": res, "dZ_flat_pairs": dz_pairs, "frame_deviation": worst_frame[0]}


def standard_screen(m: MetricSpec):
    """Z = d_u - H d_v and S_i = d_i - mu_i d_v, as component Exprs."""
    n = m.n
    mu = m.mu if m.form == "generalized" else (ZERO,) * n
    Z = [ONE, neg(m.H)] + [ZERO] * n
    S = []
    for i in range(n):
        e = [ZERO] * m.dim
        e[1] = neg(mu[i])
        e[2 + i] = ONE
        S.append(e)
    return Z, S


# ------------------------------------------------------------------ Jacobi

def jacobi_residual(m: MetricSpec, position, velocity, X, t_grid, h: float = 1e-3,
                    method: str = "auto", dX=None) -> float:
    """max over ``t_grid`` of |nabla^2 (t X(t)) / dt^2| along a curve.

    ``position``, ``velocity`` and ``X`` are callables of t.  Covariant
    derivatives along the curve are nabla W/dt = dW/dt + Gamma(velocity, W);
    the outer one is a centred difference.  The inner dX/dt comes from ``dX``
    when given, else from a centred difference as well.
    """
    def gam(t):
        return christoffel(m, position(t), method).gamma

    def deriv(t):
        if dX is not None:
            return dX(t)
        return (X(t + h) - X(t - h)) / (2 * h)

    def cov_y(t):
        # nabla Y / dt with Y = t X(t)
        dY = X(t) + t * deriv(t)
        return dY + np.einsum("lab,a,b->l", gam(t), velocity(t), t * X(t))

    worst = 0.0
    for t in t_grid:
        dW = (cov_y(t + h) - cov_y(t - h)) / (2 * h)
        acc = dW + np.einsum("lab,a,b->l", gam(t), velocity(t), cov_y(t))
        worst = max(worst, float(np.max(np.abs(acc))))
    return worst


def jacobi_property_check(m: MetricSpec, st0: GeodesicState, X0, t_max: float,
                          samples: int = 25, method: str = "auto", X_override=None,
                          geodesic_tol: float = 1e-7) -> float:
    """Residual of nabla^2 (t X) / dt^2 for X parallel along a geodesic.

    The geodesic through ``st0`` and the parallel field are integrated
    together on [0, t_max].  ``X_override`` replaces X(t) by a caller-supplied
    field (negative controls).  Raises if the sampled curve fails the
    geodesic equation by more than ``geodesic_tol``.
    """
    N = m.dim
    # the outer difference reads the interpolant's second derivative, which is O(step^2)
    opts = IntegratorOpts(rtol=1e-12, atol=1e-14, max_step=t_max / 4000)
    res = integrate(m, st0, (0.0, t_max), opts, method,
                    transport=np.asarray(X0, float).reshape(1, N))
    h = 2e-4 * t_max
    t_grid = np.linspace(3 * h, t_max - 3 * h, samples)

    def pos(t):
        return res.dense(t)[0]

    def vel(t):
        return res.dense(t)[1]

    for t in t_grid:
        p, v, a = res.dense(t)
        _, expected = geodesic_rhs(m, GeodesicState(p, v), method)
        if np.max(np.abs(a - expected)) > geodesic_tol:
            raise PreconditionError(f"curve is not a geodesic near t={t}")

    if X_override is None:
        def X(t):
            return res.dense_state(t)[0][2 * N:3 * N]

        def dX(t):
            # the interpolant is only C^1 at step knots; nested differences would amplify that
            return res.dense_state(t)[1][2 * N:3 * N]
    else:
        X, dX = X_override, None
    return jacobi_residual(m, pos, vel, X, t_grid, h, method, dX)


def loop_shrinking(m: MetricSpec, base, plane: tuple[int, int],
                   eps_list=(0.2, 0.1, 0.05), method: str = "auto") -> dict:
    """Compare (M(eps) - I)/eps^2 with -R(d_a, d_b) as eps halves.

    The curvature operator is evaluated at the centre of each square: for a
    pp-wave the connection is abelian, so M - I is minus the curvature
    integrated over the square up to O(eps^4), and the centre value is
    accurate to O(eps^2) where the base corner is only O(eps).  Returns
    per-eps errors and the observed order from the two finest.
    """
    base = np.asarray(base, dtype=float)
    a, b = plane
    errors = []
    for eps in eps_list:
        h = loop_holonomy(m, LoopSpec.rectangle(plane, eps, base), method)
        centre = base.copy()
        centre[a] += eps / 2
        centre[b] += eps / 2
        Di = (h.matrix - np.eye(m.dim)) / eps ** 2
        errors.append(float(np.max(np.abs(Di + curvature_operator(m, centre, a, b)))))
    out = {"eps": list(eps_list), "errors": errors, "order": None}
    ratio = eps_list[0] / eps_list[1]
    if max(errors) <= _ROUNDOFF:
        # exact to rounding: nothing left to converge
        out["order"] = math.inf
    elif len(errors) >= 2 and errors[-1] > 0:
        out["order"] = math.log(errors[-2] / errors[-1]) / math.log(ratio)
    return out
