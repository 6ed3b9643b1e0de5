"""Brinkmann-form metrics, their connection and curvature.

Coordinates are ordered (u, v, x1..xn).  A pp-wave is
``2 du (dv + H du) + dx.dx`` with ``H = H(u, x)``; the generalized form
``2 du (dv + H du + mu_i dx^i) + ghat_ij dx^i dx^j`` admits a v-dependent H.

Every quantity can be computed two ways: the generic engine (symbolic
metric derivatives, numeric assembly) and, for pp-waves, closed forms in
terms of derivatives of H.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from . import kernels
from .expr import (ONE, ZERO, Expr, VarSpace, compile_exprs, const, diff,
                   free_vars, parse)

__all__ = [
    "MetricSpec", "ChristoffelEval", "CurvatureEval", "SingularMetricError",
    "PreconditionError", "metric_at", "christoffel", "curvature", "ricci",
    "ricci_uu", "sample_points",
]


class SingularMetricError(ArithmeticError):
    def __init__(self, message: str, point=None):
        if point is not None:
            message = f"{message} at {list(np.round(np.asarray(point, float), 12))}"
        super().__init__(message)
        self.point = None if point is None else np.asarray(point, float)


class PreconditionError(ValueError):
    pass


def _upper_pairs(N: int):
    return [(a, b) for a in range(N) for b in range(a, N)]


@dataclass(frozen=True)
class MetricSpec:
    """A Brinkmann metric; build with :meth:`ppwave` or :meth:`generalized`."""

    vs: VarSpace
    form: str
    H: Expr
    mu: tuple = ()
    ghat: tuple = ()

    def __post_init__(self):
        if self.form not in ("ppwave", "generalized"):
            raise ValueError(f"unknown metric form {self.form!r}")
        n = self.vs.n
        exprs = [self.H, *self.mu, *(e for row in self.ghat for e in row)]
        for e in exprs:
            bad = [i for i in free_vars(e) if i >= self.vs.dim]
            if bad:
                raise ValueError(f"expression {e} uses coordinates outside this space")
        if self.form == "ppwave":
            if 1 in free_vars(self.H):
                raise ValueError("pp-wave H must not depend on v")
            if self.mu or self.ghat:
                raise ValueError("pp-wave metrics carry no mu or ghat")
        else:
            if len(self.mu) != n or len(self.ghat) != n or any(len(r) != n for r in self.ghat):
                raise ValueError("generalized metric needs n mu components and an n x n ghat")
            for e in (*self.mu, *(e for row in self.ghat for e in row)):
                if 1 in free_vars(e):
                    raise ValueError("mu and ghat must not depend on v")
            for i in range(n):
                for j in range(i + 1, n):
                    if self.ghat[i][j] != self.ghat[j][i]:
                        raise ValueError("ghat must be symmetric")

    @classmethod
    def ppwave(cls, vs: VarSpace, H: Expr | str) -> "MetricSpec":
        if isinstance(H, str):
            H = parse(H, vs)
        return cls(vs, "ppwave", H)

    @classmethod
    def generalized(cls, vs: VarSpace, H: Expr | str, mu=None, ghat=None) -> "MetricSpec":
        n = vs.n
        lift = lambda e: parse(e, vs) if isinstance(e, str) else (const(e) if not isinstance(e, Expr) else e)
        H = lift(H)
        mu = tuple(lift(e) for e in mu) if mu is not None else (ZERO,) * n
        if ghat is None:
            ghat = tuple(tuple(ONE if i == j else ZERO for j in range(n)) for i in range(n))
        else:
            ghat = tuple(tuple(lift(e) for e in row) for row in ghat)
        return cls(vs, "generalized", H, mu, ghat)

    @property
    def n(self) -> int:
        return self.vs.n

    @property
    def dim(self) -> int:
        return self.vs.dim

    @property
    def is_ppwave(self) -> bool:
        return self.form == "ppwave"

    @cached_property
    def components(self) -> tuple:
        """N x N matrix of component expressions g_ab."""
        N, n = self.dim, self.n
        g = [[ZERO] * N for _ in range(N)]
        g[0][0] = 2 * self.H
        g[0][1] = g[1][0] = ONE
        for i in range(n):
            if self.form == "generalized":
                g[0][2 + i] = g[2 + i][0] = self.mu[i]
                for j in range(n):
                    g[2 + i][2 + j] = self.ghat[i][j]
            else:
                g[2 + i][2 + i] = ONE
        return tuple(tuple(r) for r in g)

    # compiled programs; derivatives are computed once per metric

    @cached_property
    def _metric_exprs(self) -> list:
        return [self.components[a][b] for a, b in _upper_pairs(self.dim)]

    @cached_property
    def _first_derivs(self) -> list:
        return [diff(e, c) for c in range(self.dim) for e in self._metric_exprs]

    @cached_property
    def generic_programs(self):
        """g (upper triangle) followed by d_c g for c = 0..N-1."""
        return compile_exprs(self._metric_exprs + self._first_derivs)

    @cached_property
    def curvature_programs(self):
        N = self.dim
        second = []
        for c in range(N):
            for d in range(c, N):
                for e in self._first_derivs[c * len(self._metric_exprs):(c + 1) * len(self._metric_exprs)]:
                    second.append(diff(e, d))
        return compile_exprs(self._metric_exprs + self._first_derivs + second)

    @cached_property
    def grad_H(self) -> tuple:
        """(d_u H, d_x1 H, .., d_xn H)."""
        return tuple(diff(self.H, c) for c in [0] + list(range(2, self.dim)))

    @cached_property
    def pp_programs(self):
        return compile_exprs(self.grad_H)

    @cached_property
    def hessian_H(self) -> tuple:
        """n x n matrix of d_i d_j H."""
        n = self.n
        return tuple(tuple(diff(diff(self.H, 2 + i), 2 + j) for j in range(n)) for i in range(n))

    @cached_property
    def hessian_programs(self):
        return compile_exprs([self.hessian_H[i][j] for i, j in _upper_pairs(self.n)])

    def check_point(self, p) -> np.ndarray:
        x = np.ascontiguousarray(p, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ValueError(f"point must have {self.dim} coordinates, got shape {x.shape}")
        return x


@dataclass(frozen=True)
class ChristoffelEval:
    point: np.ndarray
    gamma: np.ndarray  # gamma[l, a, b] = Gamma^l_{ab}

    def __getitem__(self, idx):
        return self.gamma[idx]


@dataclass(frozen=True)
class CurvatureEval:
    """Lowered curvature R[m, n, s, r] = g(R(d_m, d_n) d_s, d_r)."""

    point: np.ndarray
    R: np.ndarray

    def __getitem__(self, idx):
        return self.R[idx]

    def symmetry_residual(self) -> float:
        R = self.R
        return float(max(
            np.max(np.abs(R + R.transpose(1, 0, 2, 3))),
            np.max(np.abs(R + R.transpose(0, 1, 3, 2))),
            np.max(np.abs(R - R.transpose(2, 3, 0, 1))),
        ))

    def bianchi_residual(self) -> float:
        R = self.R
        cyc = R + R.transpose(1, 2, 0, 3) + R.transpose(2, 0, 1, 3)
        return float(np.max(np.abs(cyc)))

    def nonzero(self, tol: float = 0.0):
        """Components with |R| > tol as ((m, n, s, r), value), in index order."""
        idx = np.argwhere(np.abs(self.R) > tol)
        return [(tuple(int(i) for i in ix), float(self.R[tuple(ix)])) for ix in idx]


def _metric_matrix(m: MetricSpec, x: np.ndarray) -> np.ndarray:
    vals = m.generic_programs.eval_checked(x)
    N = m.dim
    g = np.empty((N, N))
    kernels.unpack_sym(vals, 0, N, g)
    return g


def _check_ghat(m: MetricSpec, g: np.ndarray, x) -> None:
    if m.form == "generalized":
        try:
            np.linalg.cholesky(g[2:, 2:])
        except np.linalg.LinAlgError:
            raise SingularMetricError("transverse metric ghat is not positive definite", x) from None


def metric_at(m: MetricSpec, p) -> tuple[np.ndarray, np.ndarray]:
    """Metric matrix and its inverse at ``p``."""
    x = m.check_point(p)
    g = _metric_matrix(m, x)
    _check_ghat(m, g, x)
    ginv, status = kernels.inverse_checked(g)
    if status != kernels.STATUS_OK:
        raise SingularMetricError("singular metric", x)
    resid = np.max(np.abs(g @ ginv - np.eye(m.dim)))
    scale = max(1.0, np.max(np.abs(g)) * np.max(np.abs(ginv)))
    if resid > 1e-12 * scale:
        raise SingularMetricError(f"ill-conditioned metric (inverse residual {resid:.3g})", x)
    return g, ginv


def _pick(m: MetricSpec, method: str) -> str:
    if method == "auto":
        return "fast" if m.is_ppwave else "generic"
    if method == "fast" and not m.is_ppwave:
        raise PreconditionError("closed-form path requires a pp-wave metric")
    if method not in ("fast", "generic"):
        raise ValueError(f"unknown method {method!r}")
    return method


def christoffel(m: MetricSpec, p, method: str = "auto") -> ChristoffelEval:
    """Christoffel symbols Gamma^l_{ab} at ``p``.

    ``method`` is ``"fast"`` (pp-wave closed form), ``"generic"`` or
    ``"auto"`` (fast when available).
    """
    x = m.check_point(p)
    if _pick(m, method) == "fast":
        dH = m.pp_programs.eval_checked(x)
        return ChristoffelEval(x, kernels.christoffel_pp(dH, m.dim))
    vals = m.generic_programs.eval_checked(x)
    g, dg, _ = kernels.metric_and_derivs(vals, m.dim, False)
    _check_ghat(m, g, x)
    gam, _, status = kernels.christoffel_generic(g, dg)
    if status != kernels.STATUS_OK:
        raise SingularMetricError("singular metric", x)
    return ChristoffelEval(x, gam)


def curvature(m: MetricSpec, p, method: str = "auto") -> CurvatureEval:
    """Lowered Riemann tensor at ``p``."""
    x = m.check_point(p)
    N = m.dim
    if _pick(m, method) == "fast":
        hess = m.hessian_programs.eval_checked(x)
        R = np.zeros((N, N, N, N))
        k = 0
        for i in range(m.n):
            for j in range(i, m.n):
                val = -hess[k]
                k += 1
                for a, b in ((i, j), (j, i)):
                    a2, b2 = a + 2, b + 2
                    R[a2, 0, 0, b2] = val
                    R[0, a2, b2, 0] = val
                    R[a2, 0, b2, 0] = -val
                    R[0, a2, 0, b2] = -val
        return CurvatureEval(x, R)
    vals = m.curvature_programs.eval_checked(x)
    g, dg, ddg = kernels.metric_and_derivs(vals, N, True)
    _check_ghat(m, g, x)
    R, status = kernels.curvature_generic(g, dg, ddg)
    if status != kernels.STATUS_OK:
        raise SingularMetricError("singular metric", x)
    return CurvatureEval(x, R)


def ricci(m: MetricSpec, p) -> np.ndarray:
    """Ricci tensor Ric(Y, U) = trace(X -> R(X, Y)U), via the generic engine."""
    x = m.check_point(p)
    R = curvature(m, x, method="generic").R
    _, ginv = metric_at(m, x)
    # Ric[s, n] = R^l_{s l n} = ginv[l, r] R[l, n, s, r]
    return np.einsum("lr,lnsr->sn", ginv, R)


def ricci_uu(m: MetricSpec, p) -> float:
    """Ric(d_u, d_u) = -sum_i d_i^2 H for a pp-wave."""
    if not m.is_ppwave:
        raise PreconditionError("ricci_uu closed form requires a pp-wave; use ricci()")
    x = m.check_point(p)
    hess = m.hessian_programs.eval_checked(x)
    k, total = 0, 0.0
    for i in range(m.n):
        for j in range(i, m.n):
            if i == j:
                total += hess[k]
            k += 1
    return -total


def sample_points(vs: VarSpace, count: int, rng: np.random.Generator,
                  half_width: float = 1.0) -> np.ndarray:
    """Random points: periodic coordinates over one period, others in a box."""
    pts = rng.uniform(-half_width, half_width, size=(count, vs.dim))
    for i, per in enumerate(vs.periods):
        if per is not None:
            pts[:, i] = rng.uniform(0.0, per, size=count)
    return pts


def nonsingular_points(m: MetricSpec, points: Sequence) -> np.ndarray:
    """Keep only points where the metric is evaluable and nondegenerate."""
    keep = []
    for p in points:
        try:
            metric_at(m, p)
        except (SingularMetricError, ArithmeticError):
            continue
        keep.append(p)
    return np.array(keep).reshape(-1, m.dim)
