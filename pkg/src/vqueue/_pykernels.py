"""Pure-Python fallback for the compiled kernels in ``_kernels.pyx``.

Same entry points, same order of uniform draws and the same floating-point
operation order, so results match the compiled backend exactly. Roughly two
orders of magnitude slower; used when the extension is not built or when
``VQUEUE_PURE_PYTHON=1``.
"""
from __future__ import annotations

import math

import numpy as np

from ._errors import raise_kernel_error
from .expr import (
    OP_ADD, OP_CONST, OP_DIV, OP_EXP, OP_IFGT, OP_LOG, OP_MIN, OP_MUL,
    OP_N, OP_NEG, OP_POW, OP_SUB, OP_T, OP_X, OP_Y, _div, _exp, _log, _pow,
)

ARRIVAL = 0
SERVICE_END = 1
OK, NO_EVENT = 0, 1
ERR_STALL, ERR_BOUND, ERR_DOMAIN, ERR_CYCLE, ERR_EVENTS = -1, -2, -3, -4, -5

QUAD_ABS = 1e-10
QUAD_REL = 1e-8
QUAD_DEPTH = 30
QUAD_STACK = 128
BOUND_SLACK = 1e-12
MAX_GUARDS = 32
MAX_FUNCTIONALS = 16

XGK = (0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
       0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
       0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
       0.207784955007898467600689403773245, 0.000000000000000000000000000000000)
WGK = (0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
       0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
       0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
       0.204432940075298892414161999234649, 0.209482141084727828012999174891714)
WG = (0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
      0.381830050505118944950369775488975, 0.417959183673469387755102040816327)

INF = math.inf


class _Prog:
    __slots__ = ("code", "consts")

    def __init__(self, program):
        self.code = [int(c) for c in program.code]
        self.consts = [float(c) for c in program.consts]


def _run(p: _Prog, n, x, y, t):
    code = p.code
    stack = []
    push = stack.append
    pc = 0
    end = len(code)
    while pc < end:
        op = code[pc]
        pc += 1
        if op == OP_CONST:
            push(p.consts[code[pc]])
            pc += 1
        elif op == OP_N:
            push(n)
        elif op == OP_X:
            push(x)
        elif op == OP_Y:
            push(y)
        elif op == OP_T:
            push(t)
        elif op == OP_NEG:
            stack[-1] = -stack[-1]
        elif op == OP_EXP:
            stack[-1] = _exp(stack[-1])
        elif op == OP_LOG:
            stack[-1] = _log(stack[-1])
        elif op == OP_IFGT:
            q = stack.pop()
            pp = stack.pop()
            b = stack.pop()
            stack[-1] = pp if stack[-1] > b else q
        else:
            b = stack.pop()
            a = stack[-1]
            if op == OP_ADD:
                stack[-1] = a + b
            elif op == OP_SUB:
                stack[-1] = a - b
            elif op == OP_MUL:
                stack[-1] = a * b
            elif op == OP_DIV:
                stack[-1] = _div(a, b)
            elif op == OP_POW:
                stack[-1] = _pow(a, b)
            elif op == OP_MIN:
                stack[-1] = b if b < a else a
            else:
                stack[-1] = b if b > a else a
    return stack[0]


class _Model:
    def __init__(self, km):
        self.lam = _Prog(km.lam)
        self.lam0 = _Prog(km.lam0)
        self.h = _Prog(km.h)
        self.bound = float(km.bound)
        self.max_proposals = int(km.max_proposals)
        self.guards = [_Prog(g) for g in list(km.guards)[:MAX_GUARDS]]


class _KernelError(Exception):
    def __init__(self, rc, err):
        self.rc = rc
        self.err = err


def _rates(m: _Model, n, x, y):
    if n > 0:
        lam = _run(m.lam, n, x, y, 0.0)
        h = _run(m.h, n, x, y, 0.0)
    else:
        lam = _run(m.lam0, 0.0, 0.0, y, 0.0)
        h = 0.0
    if not (lam >= 0.0 and h >= 0.0 and lam < INF and h < INF):
        raise _KernelError(ERR_DOMAIN, (n, x, y, lam + h))
    if lam + h > m.bound * (1.0 + BOUND_SLACK):
        raise _KernelError(ERR_BOUND, (n, x, y, lam + h))
    return lam, h


def _next_jump(m: _Model, uniform, n, x, y, horizon):
    s = 0.0
    busy = 1.0 if n > 0 else 0.0
    k = 0
    while True:
        u = uniform()
        s += -math.log(1.0 - u) / m.bound
        if s > horizon:
            return None, None
        lam, h = _rates(m, n, x + busy * s, y + s)
        u = uniform() * m.bound
        if u < lam:
            return s, ARRIVAL
        if u < lam + h:
            return s, SERVICE_END
        k += 1
        if k >= m.max_proposals:
            raise _KernelError(ERR_STALL, (n, x, y, s))


def _uniform_source(bit_generator):
    return np.random.Generator(bit_generator).random


def _jump(n, x, y, dt, kind):
    busy = 1.0 if n > 0 else 0.0
    if kind == ARRIVAL:
        return n + 1.0, x + busy * dt, 0.0
    return n - 1.0, 0.0, y + dt


def _guarded(fn):
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _KernelError as exc:
            raise_kernel_error(exc.rc, *exc.err)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ---------------------------------------------------------------- quadrature

INT_HAZARD, INT_PROGRAM, INT_COMPENSATOR = 0, 1, 2


class _Integrand:
    __slots__ = ("kind", "m", "prog", "n", "x", "y", "t", "busy")

    def __init__(self, kind, m, prog=None):
        self.kind = kind
        self.m = m
        self.prog = prog
        self.n = self.x = self.y = self.t = self.busy = 0.0

    def set(self, n, x, y, t):
        self.n, self.x, self.y, self.t = n, x, y, t
        self.busy = 1.0 if n > 0 else 0.0

    def __call__(self, u):
        x = self.x + self.busy * u
        y = self.y + u
        t = self.t + u
        n = self.n
        m = self.m
        if self.kind == INT_PROGRAM:
            return _run(self.prog, n, x, y, t)
        if n > 0:
            lam = _run(m.lam, n, x, y, 0.0)
            h = _run(m.h, n, x, y, 0.0)
        else:
            lam = _run(m.lam0, 0.0, 0.0, y, 0.0)
            h = 0.0
        if self.kind == INT_HAZARD:
            return lam + h
        here = _run(self.prog, n, x, y, t)
        nd = n - 1.0 if n > 0 else 0.0
        return (lam * (_run(self.prog, n + 1.0, x, 0.0, t) - here)
                + h * (_run(self.prog, nd, 0.0, y, t) - here))


def _gk15(f, a, b):
    c = 0.5 * (a + b)
    hl = 0.5 * (b - a)
    fc = f(c)
    rk = fc * WGK[7]
    rg = fc * WG[3]
    for j in range(7):
        dx = hl * XGK[j]
        f1 = f(c - dx)
        f2 = f(c + dx)
        rk += WGK[j] * (f1 + f2)
        if j % 2 == 1:
            rg += WG[j // 2] * (f1 + f2)
    return rk * hl, rg * hl


def _adapt(f, a, b, span):
    stack = [(a, b, 0)]
    total = 0.0
    while stack:
        lo, hi, d = stack.pop()
        kr, gr = _gk15(f, lo, hi)
        tol = QUAD_ABS * (hi - lo) / span
        if QUAD_REL * abs(kr) > tol:
            tol = QUAD_REL * abs(kr)
        if abs(kr - gr) <= tol or d >= QUAD_DEPTH or len(stack) + 2 > QUAD_STACK:
            total += kr
        else:
            mid = 0.5 * (lo + hi)
            stack.append((mid, hi, d + 1))
            stack.append((lo, mid, d + 1))
    return total


def _integrate(f: _Integrand, m: _Model, length):
    if length <= 0.0:
        return 0.0
    br = [0.0]
    for g in m.guards:
        g0 = _run(g, f.n, f.x, f.y, f.t)
        g1 = _run(g, f.n, f.x + f.busy, f.y + 1.0, f.t + 1.0)
        if g1 != g0:
            r = -g0 / (g1 - g0)
            if 0.0 < r < length:
                br.append(r)
    inner = sorted(br[1:])
    br = [0.0] + inner + [length]
    total = 0.0
    for i in range(len(br) - 1):
        if br[i + 1] > br[i]:
            total += _adapt(f, br[i], br[i + 1], length)
    return total


# ---------------------------------------------------------------- entry points


def eval_program(program, n, x, y, t=0.0):
    return _run(_Prog(program), float(n), float(x), float(y), float(t))


def integrated_hazard(km, n, x, y, length):
    m = _Model(km)
    f = _Integrand(INT_HAZARD, m)
    f.set(float(n), float(x), float(y), 0.0)
    return _integrate(f, m, float(length))


def integrated_program(km, program, n, x, y, t, length):
    m = _Model(km)
    f = _Integrand(INT_PROGRAM, m, _Prog(program))
    f.set(float(n), float(x), float(y), float(t))
    return _integrate(f, m, float(length))


@_guarded
def next_events(km, n, x, y, count, bit_generator):
    m = _Model(km)
    uniform = _uniform_source(bit_generator)
    dts = np.empty(count, dtype=np.float64)
    kinds = np.empty(count, dtype=np.int8)
    for i in range(count):
        dt, kind = _next_jump(m, uniform, float(n), float(x), float(y), INF)
        dts[i] = dt
        kinds[i] = kind
    return dts, kinds


@_guarded
def simulate_events(km, n, x, y, horizon, bit_generator, max_events):
    m = _Model(km)
    uniform = _uniform_source(bit_generator)
    n, x, y, horizon = float(n), float(x), float(y), float(horizon)
    rows = []
    tm = 0.0
    while True:
        dt, kind = _next_jump(m, uniform, n, x, y, horizon - tm)
        if dt is None:
            break
        if len(rows) >= max_events:
            raise _KernelError(ERR_EVENTS, (n, x, y, tm))
        tm += dt
        n, x, y = _jump(n, x, y, dt, kind)
        rows.append((tm, float(kind), n, x, y))
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), 5)


@_guarded
def hitting_times(km, n0, x0, y0, cap, count, bit_generator):
    m = _Model(km)
    uniform = _uniform_source(bit_generator)
    taus = np.empty(count, dtype=np.float64)
    censored = np.zeros(count, dtype=np.uint8)
    for i in range(count):
        n, x, y, tm = float(n0), float(x0), float(y0), 0.0
        while n > 0:
            dt, kind = _next_jump(m, uniform, n, x, y, cap - tm)
            if dt is None:
                tm = float(cap)
                censored[i] = 1
                break
            tm += dt
            n, x, y = _jump(n, x, y, dt, kind)
        taus[i] = tm
    return taus, censored


@_guarded
def n_at_time(km, n0, x0, y0, horizon, count, bit_generator):
    m = _Model(km)
    uniform = _uniform_source(bit_generator)
    out = np.empty(count, dtype=np.int64)
    for i in range(count):
        n, x, y, tm = float(n0), float(x0), float(y0), 0.0
        while True:
            dt, kind = _next_jump(m, uniform, n, x, y, horizon - tm)
            if dt is None:
                break
            tm += dt
            n, x, y = _jump(n, x, y, dt, kind)
        out[i] = int(n)
    return out


@_guarded
def jump_counts(km, n0, x0, y0, delta, count, bit_generator):
    m = _Model(km)
    uniform = _uniform_source(bit_generator)
    ups = np.zeros(count, dtype=np.int32)
    downs = np.zeros(count, dtype=np.int32)
    for i in range(count):
        n, x, y, tm = float(n0), float(x0), float(y0), 0.0
        while True:
            dt, kind = _next_jump(m, uniform, n, x, y, delta - tm)
            if dt is None:
                break
            tm += dt
            if kind == ARRIVAL:
                ups[i] += 1
            else:
                downs[i] += 1
            n, x, y = _jump(n, x, y, dt, kind)
    return ups, downs


@_guarded
def cycles(km, warmup, count, levels, functionals, max_length, bit_generator):
    if len(functionals) > MAX_FUNCTIONALS:
        raise ValueError(f"at most {MAX_FUNCTIONALS} functionals per run")
    m = _Model(km)
    uniform = _uniform_source(bit_generator)
    progs = [_Prog(p) for p in functionals]
    nf = len(progs)
    lengths = np.zeros(count, dtype=np.float64)
    occ = np.zeros((count, levels + 1), dtype=np.float64)
    integ = np.zeros((count, nf), dtype=np.float64)
    acc_occ = [0.0] * (levels + 1)
    acc_int = [0.0] * nf
    n, x, y, clen = 1.0, 0.0, 0.0, 0.0
    done = -warmup
    f = _Integrand(INT_PROGRAM, m)
    while done < count:
        dt, kind = _next_jump(m, uniform, n, x, y, max_length - clen)
        if dt is None:
            raise _KernelError(ERR_CYCLE, (n, x, y, max_length))
        lev = min(int(n), levels)
        acc_occ[lev] += dt
        f.set(n, x, y, 0.0)
        for j in range(nf):
            f.prog = progs[j]
            acc_int[j] += _integrate(f, m, dt)
        clen += dt
        if kind == ARRIVAL and n == 0.0:
            if done >= 0:
                lengths[done] = clen
                occ[done, :] = acc_occ
                integ[done, :] = acc_int
            done += 1
            clen = 0.0
            acc_occ = [0.0] * (levels + 1)
            acc_int = [0.0] * nf
        n, x, y = _jump(n, x, y, dt, kind)
    return lengths, occ, integ


@_guarded
def dynkin(km, phi, n0, x0, y0, horizon, count, bit_generator):
    m = _Model(km)
    p = _Prog(phi)
    uniform = _uniform_source(bit_generator)
    residuals = np.empty(count, dtype=np.float64)
    finals = np.empty(count, dtype=np.float64)
    f = _Integrand(INT_COMPENSATOR, m, p)
    horizon = float(horizon)
    for i in range(count):
        n, x, y, tm = float(n0), float(x0), float(y0), 0.0
        drift = 0.0
        comp = 0.0
        start = _run(p, n, x, y, 0.0)
        while True:
            dt, kind = _next_jump(m, uniform, n, x, y, horizon - tm)
            seg = dt if dt is not None else horizon - tm
            tend = tm + seg if dt is not None else horizon
            busy = 1.0 if n > 0 else 0.0
            nx = x + busy * seg
            ny = y + seg
            drift += _run(p, n, nx, ny, tend) - _run(p, n, x, y, tm)
            f.set(n, x, y, tm)
            comp += _integrate(f, m, seg)
            if dt is None:
                x, y, tm = nx, ny, horizon
                break
            tm = tend
            if kind == ARRIVAL:
                x, y, n = nx, 0.0, n + 1.0
            else:
                n, x, y = n - 1.0, 0.0, ny
        end = _run(p, n, x, y, horizon)
        finals[i] = end
        residuals[i] = end - start - drift - comp
    return residuals, finals
