"""Adaptive Dormand-Prince 5(4) driver with blow-up detection and dense output.

The step kernel (``kernels.dopri_step``) is compiled; this module owns step
size control, sample recording and the termination verdict.  Local error
control uses the embedded 4th-order solution, the step is propagated with
the 5th-order one (local extrapolation), and the last stage is reused as the
first stage of the next step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

__all__ = ["IntegratorOpts", "Verdict", "OdeRun", "integrate_system", "hermite"]

COMPLETED = "Completed"
BLOWUP = "BlowUp"
UNDERFLOW = "StepUnderflow"
MAX_STEPS = "MaxSteps"

_SEVERITY = {COMPLETED: 0, MAX_STEPS: 1, UNDERFLOW: 2, BLOWUP: 3}


@dataclass(frozen=True)
class IntegratorOpts:
    rtol: float = 1e-9
    atol: float = 1e-12
    max_steps: int = 200_000
    blowup_norm: float = 1e8
    sample_stride: int = 1
    max_step: float = math.inf

    def __post_init__(self):
        for name in ("rtol", "atol"):
            val = getattr(self, name)
            if not (0.0 < val <= 1e-2):
                raise ValueError(f"{name} must lie in (0, 1e-2], got {val!r}")
        if self.max_steps < 1 or self.sample_stride < 1:
            raise ValueError("max_steps and sample_stride must be positive")
        if not self.blowup_norm > 0:
            raise ValueError("blowup_norm must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")


@dataclass(frozen=True)
class Verdict:
    """How an integration ended.

    kind is Completed, BlowUp, StepUnderflow or MaxSteps.  For BlowUp,
    ``s_star`` is the last accepted parameter and ``uncertainty`` spans from
    where the state norm first exceeded the escape threshold to one step
    beyond ``s_star``.
    """

    kind: str
    s_last: float
    s_star: float | None = None
    uncertainty: float | None = None

    @property
    def completed(self) -> bool:
        return self.kind == COMPLETED

    def severity(self) -> int:
        return _SEVERITY[self.kind]

    def to_json(self) -> dict:
        out = {"kind": self.kind, "s_last": self.s_last}
        if self.kind == BLOWUP:
            out["s_star"] = self.s_star
            out["uncertainty"] = self.uncertainty
        if self.kind == COMPLETED:
            out["note"] = "no obstruction within budget"
        return out


def hermite(t, t0, t1, y0, y1, f0, f1):
    """Cubic Hermite interpolant on [t0, t1] and its derivative at ``t``."""
    h = t1 - t0
    th = (t - t0) / h
    th2 = th * th
    th3 = th2 * th
    h00 = 2 * th3 - 3 * th2 + 1
    h10 = th3 - 2 * th2 + th
    h01 = -2 * th3 + 3 * th2
    h11 = th3 - th2
    y = h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1
    d00 = (6 * th2 - 6 * th) / h
    d10 = 3 * th2 - 4 * th + 1
    d01 = (-6 * th2 + 6 * th) / h
    d11 = 3 * th2 - 2 * th
    dy = d00 * y0 + d10 * f0 + d01 * y1 + d11 * f1
    return y, dy


@dataclass
class OdeRun:
    ts: np.ndarray
    ys: np.ndarray
    fs: np.ndarray
    verdict: Verdict
    n_steps: int = 0
    n_rejected: int = 0
    extra: dict = field(default_factory=dict)

    def _locate(self, t: float) -> int:
        ts = self.ts
        if len(ts) < 2:
            raise ValueError("dense output needs at least two samples")
        lo, hi = min(ts[0], ts[-1]), max(ts[0], ts[-1])
        if not (lo - 1e-12 * max(1, abs(lo)) <= t <= hi + 1e-12 * max(1, abs(hi))):
            raise ValueError(f"t={t} outside integrated range [{lo}, {hi}]")
        if ts[-1] >= ts[0]:
            k = int(np.searchsorted(ts, t, side="right")) - 1
        else:
            k = int(np.searchsorted(-ts, -t, side="right")) - 1
        return min(max(k, 0), len(ts) - 2)

    def dense(self, t: float):
        """State and derivative at ``t`` by cubic Hermite interpolation."""
        k = self._locate(t)
        return hermite(t, self.ts[k], self.ts[k + 1], self.ys[k], self.ys[k + 1],
                       self.fs[k], self.fs[k + 1])

    def dense_many(self, tgrid):
        ys, dys = zip(*(self.dense(float(t)) for t in tgrid))
        return np.array(ys), np.array(dys)


class NumericFailure(ArithmeticError):
    """Singular metric or domain error met along an integration path."""

    def __init__(self, message: str, s: float, state: np.ndarray):
        super().__init__(f"{message} at s={s!r}")
        self.s = s
        self.state = state


def _fail(status: int, t: float, y: np.ndarray):
    if status == kernels.STATUS_SINGULAR:
        raise NumericFailure("singular metric encountered", t, y)
    raise NumericFailure("expression domain error (ln/division) encountered", t, y)


def _wnorm(v, y, opts):
    sc = opts.atol + opts.rtol * np.abs(y)
    return math.sqrt(float(np.mean((v / sc) ** 2)))


def integrate_system(kind: int, programs, params: np.ndarray, n: int, y0, t0: float,
                     t1: float, opts: IntegratorOpts, norm_slice: slice | None = None,
                     record: bool = True) -> OdeRun:
    """Integrate one of the kernel right-hand sides from t0 to t1."""
    ops, iargs, fargs, offsets = programs.arrays
    params = np.ascontiguousarray(params, dtype=np.float64)
    y = np.array(y0, dtype=np.float64)
    t = float(t0)
    status = np.zeros(1, dtype=np.int64)
    nsl = norm_slice if norm_slice is not None else slice(None)

    def f_at(tt, yy):
        status[0] = 0
        out = kernels.rhs(kind, tt, yy, ops, iargs, fargs, offsets, params, n, status)
        return out, int(status[0])

    f, st = f_at(t, y)
    if st != 0:
        _fail(st, t, y)
    ts, ys, fs = [t], [y.copy()], [f.copy()]
    span = float(t1) - t
    if span == 0.0:
        return OdeRun(np.array(ts), np.array(ys), np.array(fs), Verdict(COMPLETED, t))
    direction = 1.0 if span > 0 else -1.0
    remaining = abs(span)

    # initial step (Hairer, Norsett & Wanner II.4)
    d0 = _wnorm(y, y, opts)
    d1 = _wnorm(f, y, opts)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, remaining)
    f1, _ = f_at(t + direction * h0, y + direction * h0 * f)
    d2 = _wnorm(f1 - f, y, opts) / h0 if np.all(np.isfinite(f1)) else np.inf
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2 if math.isfinite(d2) else h0 * 1e-3
    h = min(100 * h0, h1, opts.max_step, remaining)

    steps = rejected = 0
    s_cross = None
    last_h = h
    last_status = 0
    rejected_prev = False
    verdict = None
    while True:
        if steps >= opts.max_steps:
            verdict = Verdict(MAX_STEPS, t)
            break
        remaining = abs(float(t1) - t)
        final = h >= remaining
        if final:
            h = remaining
        status[0] = 0
        y5, f5, err = kernels.dopri_step(kind, t, y, f, direction * h, ops, iargs, fargs,
                                         offsets, params, n, opts.rtol, opts.atol, status)
        st = int(status[0])
        if st == 0 and err <= 1.0 and np.all(np.isfinite(y5)) and np.all(np.isfinite(f5)):
            steps += 1
            t = float(t1) if final else t + direction * h
            y, f = y5, f5
            last_h = h
            if record:
                ts.append(t); ys.append(y.copy()); fs.append(f.copy())
            if s_cross is None and np.max(np.abs(y[nsl])) > opts.blowup_norm:
                s_cross = t
            if final:
                verdict = Verdict(COMPLETED, t)
                break
            fac = 5.0 if err == 0.0 else min(5.0, 0.9 * err ** -0.2)
            if rejected_prev:
                fac = min(fac, 1.0)
            h = min(h * max(fac, 0.2), opts.max_step)
            rejected_prev = False
        else:
            rejected += 1
            last_status = st
            if st != 0 or not math.isfinite(err):
                h *= 0.25
            else:
                h *= max(0.2, 0.9 * err ** -0.2)
            rejected_prev = True
        if h < 1e-14 * max(1.0, abs(t)):
            escaped = np.max(np.abs(y[nsl])) > opts.blowup_norm
            if escaped:
                cross = s_cross if s_cross is not None else t
                verdict = Verdict(BLOWUP, t, s_star=t, uncertainty=abs(t - cross) + last_h)
            elif last_status != 0:
                _fail(last_status, t, y)
            else:
                verdict = Verdict(UNDERFLOW, t)
            break
    if ts[-1] != t:
        ts.append(t); ys.append(y.copy()); fs.append(f.copy())
    run = OdeRun(np.array(ts), np.array(ys), np.array(fs), verdict, steps, rejected)
    return run
