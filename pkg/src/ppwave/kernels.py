"""Numeric kernels: bytecode evaluation, connection/curvature assembly, RK stepping.

Everything here is plain numba-compatible Python.  ``_jit.njit`` compiles it
when numba is enabled; with ``PPWAVE_DISABLE_JIT=1`` the same functions run
uncompiled and batch evaluation switches to a vectorised numpy routine.

Status codes written by kernels: 0 ok, 1 singular metric, 2 domain error.
"""

import math

import numpy as np

from ._jit import JIT_ENABLED, njit

OP_CONST = 0
OP_VAR = 1
OP_ADD = 2
OP_MUL = 3
OP_NEG = 4
OP_DIV = 5
OP_POW = 6
OP_SIN = 7
OP_COS = 8
OP_EXP = 9
OP_LN = 10

STATUS_OK = 0
STATUS_SINGULAR = 1
STATUS_DOMAIN = 2

# right-hand-side kinds for the stepper
K_GEO_PP = 0
K_GEO_GENERIC = 1
K_REDUCED = 2
K_TRANSPORT_PP = 3
K_TRANSPORT_GENERIC = 4
K_NORMALIZE = 5

_STACK = 64


@njit
def _run_program(ops, iargs, fargs, start, stop, x, stack):
    sp = 0
    bad = 0
    for k in range(start, stop):
        op = ops[k]
        if op == OP_CONST:
            stack[sp] = fargs[k]
            sp += 1
        elif op == OP_VAR:
            stack[sp] = x[iargs[k]]
            sp += 1
        elif op == OP_ADD:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] + stack[sp]
        elif op == OP_MUL:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] * stack[sp]
        elif op == OP_NEG:
            stack[sp - 1] = -stack[sp - 1]
        elif op == OP_DIV:
            sp -= 1
            if stack[sp] == 0.0:
                bad = 1
                stack[sp - 1] = np.nan
            else:
                stack[sp - 1] = stack[sp - 1] / stack[sp]
        elif op == OP_POW:
            b = stack[sp - 1]
            p = iargs[k]
            if b == 0.0 and p < 0:
                bad = 1
                stack[sp - 1] = np.nan
            else:
                r = 1.0
                q = p if p > 0 else -p
                while q > 0:
                    if q & 1:
                        r *= b
                    b *= b
                    q >>= 1
                stack[sp - 1] = r if p > 0 else 1.0 / r
        elif op == OP_SIN:
            stack[sp - 1] = math.sin(stack[sp - 1])
        elif op == OP_COS:
            stack[sp - 1] = math.cos(stack[sp - 1])
        elif op == OP_EXP:
            a = stack[sp - 1]
            stack[sp - 1] = math.exp(a) if a < 709.0 else np.inf
        elif op == OP_LN:
            a = stack[sp - 1]
            if a <= 0.0:
                bad = 1
                stack[sp - 1] = np.nan
            else:
                stack[sp - 1] = math.log(a)
    return stack[0], bad


@njit
def eval_programs(ops, iargs, fargs, offsets, x, out):
    """Evaluate every program of a set at point ``x`` into ``out``; return status."""
    stack = np.empty(_STACK)
    status = STATUS_OK
    for j in range(offsets.shape[0] - 1):
        val, bad = _run_program(ops, iargs, fargs, offsets[j], offsets[j + 1], x, stack)
        out[j] = val
        if bad:
            status = STATUS_DOMAIN
    return status


@njit
def _eval_batch_loop(ops, iargs, fargs, offsets, pts):
    npts = pts.shape[0]
    nprog = offsets.shape[0] - 1
    out = np.empty((npts, nprog))
    stack = np.empty(_STACK)
    for i in range(npts):
        x = pts[i]
        for j in range(nprog):
            val, bad = _run_program(ops, iargs, fargs, offsets[j], offsets[j + 1], x, stack)
            out[i, j] = val
    return out


def _eval_batch_numpy(ops, iargs, fargs, offsets, pts):
    """Vectorised over points: the stack holds whole columns."""
    npts = pts.shape[0]
    nprog = offsets.shape[0] - 1
    out = np.empty((npts, nprog))
    with np.errstate(all="ignore"):
        for j in range(nprog):
            stack = []
            for k in range(offsets[j], offsets[j + 1]):
                op = ops[k]
                if op == OP_CONST:
                    stack.append(np.full(npts, fargs[k]))
                elif op == OP_VAR:
                    stack.append(pts[:, iargs[k]].copy())
                elif op == OP_NEG:
                    stack[-1] = -stack[-1]
                elif op in (OP_ADD, OP_MUL, OP_DIV):
                    b = stack.pop()
                    a = stack.pop()
                    if op == OP_ADD:
                        stack.append(a + b)
                    elif op == OP_MUL:
                        stack.append(a * b)
                    else:
                        stack.append(np.where(b == 0.0, np.nan, a / np.where(b == 0.0, 1.0, b)))
                elif op == OP_POW:
                    a = stack[-1]
                    p = int(iargs[k])
                    if p < 0:
                        stack[-1] = np.where(a == 0.0, np.nan, 1.0 / np.where(a == 0.0, 1.0, a) ** (-p))
                    else:
                        stack[-1] = a ** p
                elif op == OP_SIN:
                    stack[-1] = np.sin(stack[-1])
                elif op == OP_COS:
                    stack[-1] = np.cos(stack[-1])
                elif op == OP_EXP:
                    stack[-1] = np.exp(stack[-1])
                elif op == OP_LN:
                    a = stack[-1]
                    stack[-1] = np.where(a <= 0.0, np.nan, np.log(np.where(a <= 0.0, 1.0, a)))
            out[:, j] = stack[0]
    return out


eval_programs_batch = _eval_batch_loop if JIT_ENABLED else _eval_batch_numpy


# ------------------------------------------------------------- geometry

@njit
def unpack_sym(vals, start, N, out):
    k = start
    for a in range(N):
        for b in range(a, N):
            out[a, b] = vals[k]
            out[b, a] = vals[k]
            k += 1
    return k


@njit
def metric_and_derivs(vals, N, with_second):
    """Unpack program values laid out as g, dg[k], (ddg[k][l], k <= l)."""
    g = np.empty((N, N))
    dg = np.empty((N, N, N))
    ddg = np.empty((N, N, N, N)) if with_second else np.empty((1, 1, 1, 1))
    k = unpack_sym(vals, 0, N, g)
    for c in range(N):
        k = unpack_sym(vals, k, N, dg[c])
    if with_second:
        for c in range(N):
            for d in range(c, N):
                k = unpack_sym(vals, k, N, ddg[c, d])
                if d != c:
                    ddg[d, c] = ddg[c, d]
    return g, dg, ddg


@njit
def inverse_checked(g):
    N = g.shape[0]
    det = np.linalg.det(g)
    scale = 1.0
    for a in range(N):
        for b in range(N):
            scale = max(scale, abs(g[a, b]))
    if not math.isfinite(det) or abs(det) <= 1e-13 * scale ** N:
        return np.zeros((N, N)), STATUS_SINGULAR
    return np.linalg.inv(g), STATUS_OK


@njit
def christoffel_first_kind(dg):
    """G1[k, a, b] = 1/2 (d_a g_bk + d_b g_ak - d_k g_ab)."""
    N = dg.shape[0]
    G1 = np.empty((N, N, N))
    for k in range(N):
        for a in range(N):
            for b in range(a, N):
                val = 0.5 * (dg[a, b, k] + dg[b, a, k] - dg[k, a, b])
                G1[k, a, b] = val
                G1[k, b, a] = val
    return G1


@njit
def christoffel_generic(g, dg):
    """Gamma[l, a, b] from metric values and first derivatives."""
    N = g.shape[0]
    ginv, status = inverse_checked(g)
    G1 = christoffel_first_kind(dg)
    Gam = np.zeros((N, N, N))
    if status != STATUS_OK:
        return Gam, ginv, status
    for l in range(N):
        for a in range(N):
            for b in range(a, N):
                s = 0.0
                for k in range(N):
                    s += ginv[l, k] * G1[k, a, b]
                Gam[l, a, b] = s
                Gam[l, b, a] = s
    return Gam, ginv, status


@njit
def christoffel_pp(dH, N):
    """Closed-form pp-wave connection; dH = (d_u H, d_x1 H, .., d_xn H).

    Coordinate order (u, v, x1..xn).  Nonzero entries:
    Gamma^v_{iu} = d_i H, Gamma^v_{uu} = d_u H, Gamma^i_{uu} = -d_i H.
    """
    Gam = np.zeros((N, N, N))
    Gam[1, 0, 0] = dH[0]
    for i in range(2, N):
        Gam[1, i, 0] = dH[i - 1]
        Gam[1, 0, i] = dH[i - 1]
        Gam[i, 0, 0] = -dH[i - 1]
    return Gam


@njit
def curvature_generic(g, dg, ddg):
    """Lowered curvature R[m, n, s, r] = g(R(d_m, d_n) d_s, d_r).

    Uses R(X,Y)U = [nabla_X, nabla_Y]U - nabla_[X,Y] U, so
    R^l_{s m n} = d_m Gamma^l_{n s} - d_n Gamma^l_{m s}
                  + Gamma^l_{m k} Gamma^k_{n s} - Gamma^l_{n k} Gamma^k_{m s}.
    """
    N = g.shape[0]
    Gam, ginv, status = christoffel_generic(g, dg)
    R = np.zeros((N, N, N, N))
    if status != STATUS_OK:
        return R, status
    G1 = christoffel_first_kind(dg)
    # dGam[r, l, a, b] = d_r Gamma^l_{ab}
    dGam = np.zeros((N, N, N, N))
    tmp = np.empty((N, N))
    for r in range(N):
        # d_r ginv = -ginv (d_r g) ginv
        for a in range(N):
            for b in range(N):
                s = 0.0
                for c in range(N):
                    s += dg[r, a, c] * ginv[c, b]
                tmp[a, b] = s
        for l in range(N):
            for k in range(N):
                s = 0.0
                for c in range(N):
                    s += ginv[l, c] * tmp[c, k]
                dinv = -s
                for a in range(N):
                    for b in range(a, N):
                        dG1 = 0.5 * (ddg[r, a, b, k] + ddg[r, b, a, k] - ddg[r, k, a, b])
                        dGam[r, l, a, b] += dinv * G1[k, a, b] + ginv[l, k] * dG1
        for l in range(N):
            for a in range(N):
                for b in range(a + 1, N):
                    dGam[r, l, b, a] = dGam[r, l, a, b]
    Rup = np.zeros((N, N, N, N))  # Rup[l, s, m, n]
    for l in range(N):
        for s_ in range(N):
            for m in range(N):
                for n in range(m + 1, N):
                    val = dGam[m, l, n, s_] - dGam[n, l, m, s_]
                    for k in range(N):
                        val += Gam[l, m, k] * Gam[k, n, s_] - Gam[l, n, k] * Gam[k, m, s_]
                    Rup[l, s_, m, n] = val
                    Rup[l, s_, n, m] = -val
    for m in range(N):
        for n in range(N):
            for s_ in range(N):
                for r in range(N):
                    val = 0.0
                    for l in range(N):
                        val += g[r, l] * Rup[l, s_, m, n]
                    R[m, n, s_, r] = val
    return R, status


# ------------------------------------------------------------ right-hand sides

@njit
def _connection_at(kind, ops, iargs, fargs, offsets, pos, N):
    nprog = offsets.shape[0] - 1
    vals = np.empty(nprog)
    status = eval_programs(ops, iargs, fargs, offsets, pos, vals)
    if kind == K_GEO_PP or kind == K_TRANSPORT_PP:
        return christoffel_pp(vals, N), status
    g, dg, ddg = metric_and_derivs(vals, N, False)
    Gam, ginv, st2 = christoffel_generic(g, dg)
    if st2 != STATUS_OK:
        status = st2
    return Gam, status


@njit
def _transport_into(Gam, vel, y, start, dy, N):
    nvec = (y.shape[0] - start) // N
    for k in range(nvec):
        base = start + k * N
        for l in range(N):
            s = 0.0
            for a in range(N):
                va = vel[a]
                if va == 0.0:
                    continue
                for b in range(N):
                    s += Gam[l, a, b] * va * y[base + b]
            dy[base + l] = -s


@njit
def rhs(kind, t, y, ops, iargs, fargs, offsets, params, n, status):
    N = n + 2
    dy = np.empty(y.shape[0])
    if kind == K_GEO_PP or kind == K_GEO_GENERIC:
        pos = y[:N].copy()
        vel = y[N:2 * N]
        Gam, st = _connection_at(kind, ops, iargs, fargs, offsets, pos, N)
        if st != STATUS_OK:
            status[0] = st
        for l in range(N):
            dy[l] = vel[l]
            s = 0.0
            for a in range(N):
                for b in range(N):
                    s += Gam[l, a, b] * vel[a] * vel[b]
            dy[N + l] = -s
        _transport_into(Gam, vel, y, 2 * N, dy, N)
    elif kind == K_TRANSPORT_PP or kind == K_TRANSPORT_GENERIC:
        pos = np.empty(N)
        vel = np.empty(N)
        for l in range(N):
            pos[l] = params[l] + t * params[N + l]
            vel[l] = params[N + l]
        Gam, st = _connection_at(kind, ops, iargs, fargs, offsets, pos, N)
        if st != STATUS_OK:
            status[0] = st
        _transport_into(Gam, vel, y, 0, dy, N)
    elif kind == K_REDUCED:
        pos = np.zeros(N)
        pos[0] = params[0] + t
        pos[1] = params[1]
        for i in range(n):
            pos[2 + i] = y[i]
        grad = np.empty(n)
        st = eval_programs(ops, iargs, fargs, offsets, pos, grad)
        if st != STATUS_OK:
            status[0] = st
        for i in range(n):
            dy[i] = y[n + i]
            dy[n + i] = grad[i]
    elif kind == K_NORMALIZE:
        # y = (beta_1..n, dbeta_1..n, gamma); programs: a (upper), b, c
        pos = np.zeros(N)
        pos[0] = t
        vals = np.empty(offsets.shape[0] - 1)
        st = eval_programs(ops, iargs, fargs, offsets, pos, vals)
        if st != STATUS_OK:
            status[0] = st
        a = np.empty((n, n))
        k = unpack_sym(vals, 0, n, a)
        quad = 0.0
        kin = 0.0
        for i in range(n):
            ab = 0.0
            for j in range(n):
                ab += a[i, j] * y[j]
            quad += y[i] * ab
            kin += y[n + i] * y[n + i]
            dy[i] = y[n + i]
            dy[n + i] = 2.0 * ab - vals[k + i]
        dy[2 * n] = vals[k + n] - 0.5 * kin - quad
    else:
        for l in range(y.shape[0]):
            dy[l] = np.nan
    return dy


# ------------------------------------------------------ Dormand-Prince 5(4)

_C2, _C3, _C4, _C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
_A21 = 1.0 / 5.0
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
_A61, _A62, _A63, _A64, _A65 = (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0,
                                49.0 / 176.0, -5103.0 / 18656.0)
_B1, _B3, _B4, _B5, _B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
# error weights: 5th-order minus embedded 4th-order weights
_E1 = 71.0 / 57600.0
_E3 = -71.0 / 16695.0
_E4 = 71.0 / 1920.0
_E5 = -17253.0 / 339200.0
_E6 = 22.0 / 525.0
_E7 = -1.0 / 40.0


@njit
def dopri_step(kind, t, y, f0, h, ops, iargs, fargs, offsets, params, n, rtol, atol, status):
    """One Dormand-Prince 5(4) step (FSAL).  Returns (y5, f(t+h, y5), error norm)."""
    k1 = f0
    k2 = rhs(kind, t + _C2 * h, y + h * (_A21 * k1), ops, iargs, fargs, offsets, params, n, status)
    k3 = rhs(kind, t + _C3 * h, y + h * (_A31 * k1 + _A32 * k2),
             ops, iargs, fargs, offsets, params, n, status)
    k4 = rhs(kind, t + _C4 * h, y + h * (_A41 * k1 + _A42 * k2 + _A43 * k3),
             ops, iargs, fargs, offsets, params, n, status)
    k5 = rhs(kind, t + _C5 * h, y + h * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4),
             ops, iargs, fargs, offsets, params, n, status)
    k6 = rhs(kind, t + h, y + h * (_A61 * k1 + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5),
             ops, iargs, fargs, offsets, params, n, status)
    y5 = y + h * (_B1 * k1 + _B3 * k3 + _B4 * k4 + _B5 * k5 + _B6 * k6)
    k7 = rhs(kind, t + h, y5, ops, iargs, fargs, offsets, params, n, status)
    acc = 0.0
    m = y.shape[0]
    for i in range(m):
        e = h * (_E1 * k1[i] + _E3 * k3[i] + _E4 * k4[i] + _E5 * k5[i] + _E6 * k6[i] + _E7 * k7[i])
        sc = atol + rtol * max(abs(y[i]), abs(y5[i]))
        r = e / sc
        acc += r * r
    err = math.sqrt(acc / m)
    if not math.isfinite(err):
        err = np.inf
    return y5, k7, err
