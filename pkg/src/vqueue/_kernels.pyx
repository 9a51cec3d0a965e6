# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simulation kernels.

Every function here has a line-for-line twin in ``_pykernels.py``; both
consume uniforms from the same numpy bit generator in the same order, so
the two backends produce identical samples.
"""
from libc.math cimport exp, log, pow, fabs, INFINITY
from libc.stdlib cimport malloc, realloc, free
from cpython.pycapsule cimport PyCapsule_GetPointer
from numpy.random cimport bitgen_t

import numpy as np

cdef enum:
    MAX_STACK = 64
    MAX_GUARDS = 32
    MAX_FUNCTIONALS = 16
    QUAD_STACK = 128

cdef enum:
    OP_CONST = 0
    OP_N = 1
    OP_X = 2
    OP_Y = 3
    OP_T = 4
    OP_ADD = 5
    OP_SUB = 6
    OP_MUL = 7
    OP_DIV = 8
    OP_POW = 9
    OP_NEG = 10
    OP_EXP = 11
    OP_LOG = 12
    OP_MIN = 13
    OP_MAX = 14
    OP_IFGT = 15

cdef enum:
    ARRIVAL = 0
    SERVICE_END = 1

cdef enum:
    OK = 0
    NO_EVENT = 1
    ERR_STALL = -1
    ERR_BOUND = -2
    ERR_DOMAIN = -3
    ERR_CYCLE = -4
    ERR_EVENTS = -5

# must match _pykernels
cdef double QUAD_ABS = 1e-10
cdef double QUAD_REL = 1e-8
cdef int QUAD_DEPTH = 30
cdef double BOUND_SLACK = 1e-12

cdef double[8] XGK = [0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
                      0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
                      0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
                      0.207784955007898467600689403773245, 0.000000000000000000000000000000000]
cdef double[8] WGK = [0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
                      0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
                      0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
                      0.204432940075298892414161999234649, 0.209482141084727828012999174891714]
cdef double[4] WG = [0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
                     0.381830050505118944950369775488975, 0.417959183673469387755102040816327]


ctypedef struct Prog:
    const int* code
    int ncode
    const double* consts


ctypedef struct Model:
    Prog lam
    Prog lam0
    Prog h
    double bound
    int nguards
    Prog guards[MAX_GUARDS]
    long long max_proposals


cdef double run(const Prog* p, double n, double x, double y, double t) noexcept nogil:
    cdef double stack[MAX_STACK]
    cdef int sp = 0
    cdef int pc = 0
    cdef int op
    cdef double a, b
    while pc < p.ncode:
        op = p.code[pc]
        pc += 1
        if op == OP_CONST:
            stack[sp] = p.consts[p.code[pc]]
            pc += 1
            sp += 1
        elif op == OP_N:
            stack[sp] = n
            sp += 1
        elif op == OP_X:
            stack[sp] = x
            sp += 1
        elif op == OP_Y:
            stack[sp] = y
            sp += 1
        elif op == OP_T:
            stack[sp] = t
            sp += 1
        elif op == OP_NEG:
            stack[sp - 1] = -stack[sp - 1]
        elif op == OP_EXP:
            stack[sp - 1] = exp(stack[sp - 1])
        elif op == OP_LOG:
            stack[sp - 1] = log(stack[sp - 1])
        elif op == OP_IFGT:
            sp -= 3
            if stack[sp - 1] > stack[sp]:
                stack[sp - 1] = stack[sp + 1]
            else:
                stack[sp - 1] = stack[sp + 2]
        else:
            sp -= 1
            a = stack[sp - 1]
            b = stack[sp]
            if op == OP_ADD:
                stack[sp - 1] = a + b
            elif op == OP_SUB:
                stack[sp - 1] = a - b
            elif op == OP_MUL:
                stack[sp - 1] = a * b
            elif op == OP_DIV:
                stack[sp - 1] = a / b
            elif op == OP_POW:
                stack[sp - 1] = pow(a, b)
            elif op == OP_MIN:
                stack[sp - 1] = b if b < a else a
            else:
                stack[sp - 1] = b if b > a else a
    return stack[0]


cdef class _ProgHolder:
    """Keeps numpy buffers alive while C structs point into them."""
    cdef object code
    cdef object consts
    cdef Prog prog

    def __init__(self, program):
        self.code = np.ascontiguousarray(program.code, dtype=np.int32)
        self.consts = np.ascontiguousarray(program.consts, dtype=np.float64)
        cdef const int[::1] c = self.code
        cdef const double[::1] k = self.consts
        self.prog.code = &c[0]
        self.prog.ncode = c.shape[0]
        self.prog.consts = &k[0]


cdef class _ModelHolder:
    cdef list keep
    cdef Model m

    def __init__(self, km):
        self.keep = []
        cdef _ProgHolder p
        p = _ProgHolder(km.lam)
        self.keep.append(p)
        self.m.lam = p.prog
        p = _ProgHolder(km.lam0)
        self.keep.append(p)
        self.m.lam0 = p.prog
        p = _ProgHolder(km.h)
        self.keep.append(p)
        self.m.h = p.prog
        self.m.bound = km.bound
        self.m.max_proposals = km.max_proposals
        guards = list(km.guards)[:MAX_GUARDS]
        self.m.nguards = len(guards)
        for i, g in enumerate(guards):
            p = _ProgHolder(g)
            self.keep.append(p)
            self.m.guards[i] = p.prog


cdef bitgen_t* _bitgen(object bit_generator) except NULL:
    capsule = bit_generator.capsule
    return <bitgen_t*> PyCapsule_GetPointer(capsule, "BitGenerator")


cdef inline double uniform(bitgen_t* rng) noexcept nogil:
    return rng.next_double(rng.state)


cdef int rates(const Model* m, double n, double x, double y,
               double* lam, double* h, double* err) noexcept nogil:
    if n > 0:
        lam[0] = run(&m.lam, n, x, y, 0.0)
        h[0] = run(&m.h, n, x, y, 0.0)
    else:
        lam[0] = run(&m.lam0, 0.0, 0.0, y, 0.0)
        h[0] = 0.0
    if not (lam[0] >= 0.0 and h[0] >= 0.0 and lam[0] < INFINITY and h[0] < INFINITY):
        err[0] = n; err[1] = x; err[2] = y; err[3] = lam[0] + h[0]
        return ERR_DOMAIN
    if lam[0] + h[0] > m.bound * (1.0 + BOUND_SLACK):
        err[0] = n; err[1] = x; err[2] = y; err[3] = lam[0] + h[0]
        return ERR_BOUND
    return OK


cdef int next_jump(const Model* m, bitgen_t* rng, double n, double x, double y,
                   double horizon, double* dt, int* kind, double* err) noexcept nogil:
    """Thinning against the constant bound; NO_EVENT when the next
    accepted point lies beyond ``horizon``."""
    cdef double s = 0.0
    cdef double u, lam, h
    cdef double busy = 1.0 if n > 0 else 0.0
    cdef long long k = 0
    cdef int rc
    while True:
        u = uniform(rng)
        s += -log(1.0 - u) / m.bound
        if s > horizon:
            return NO_EVENT
        rc = rates(m, n, x + busy * s, y + s, &lam, &h, err)
        if rc != OK:
            return rc
        u = uniform(rng) * m.bound
        if u < lam:
            dt[0] = s
            kind[0] = ARRIVAL
            return OK
        if u < lam + h:
            dt[0] = s
            kind[0] = SERVICE_END
            return OK
        k += 1
        if k >= m.max_proposals:
            err[0] = n; err[1] = x; err[2] = y; err[3] = s
            return ERR_STALL


# ---------------------------------------------------------------- quadrature

cdef enum:
    INT_HAZARD = 0
    INT_PROGRAM = 1
    INT_COMPENSATOR = 2


ctypedef struct Integrand:
    int kind
    const Model* m
    const Prog* prog
    double n
    double x
    double y
    double t
    double busy


cdef double integrand(const Integrand* f, double u) noexcept nogil:
    cdef double x = f.x + f.busy * u
    cdef double y = f.y + u
    cdef double t = f.t + u
    cdef double lam, h, here, nd
    if f.kind == INT_PROGRAM:
        return run(f.prog, f.n, x, y, t)
    if f.n > 0:
        lam = run(&f.m.lam, f.n, x, y, 0.0)
        h = run(&f.m.h, f.n, x, y, 0.0)
    else:
        lam = run(&f.m.lam0, 0.0, 0.0, y, 0.0)
        h = 0.0
    if f.kind == INT_HAZARD:
        return lam + h
    here = run(f.prog, f.n, x, y, t)
    nd = f.n - 1.0 if f.n > 0 else 0.0
    return (lam * (run(f.prog, f.n + 1.0, x, 0.0, t) - here)
            + h * (run(f.prog, nd, 0.0, y, t) - here))


cdef void gk15(const Integrand* f, double a, double b, double* kres, double* gres) noexcept nogil:
    cdef double c = 0.5 * (a + b)
    cdef double hl = 0.5 * (b - a)
    cdef double fc = integrand(f, c)
    cdef double rk = fc * WGK[7]
    cdef double rg = fc * WG[3]
    cdef double f1, f2, dx
    cdef int j
    for j in range(7):
        dx = hl * XGK[j]
        f1 = integrand(f, c - dx)
        f2 = integrand(f, c + dx)
        rk += WGK[j] * (f1 + f2)
        if j % 2 == 1:
            rg += WG[j // 2] * (f1 + f2)
    kres[0] = rk * hl
    gres[0] = rg * hl


cdef double adapt(const Integrand* f, double a, double b, double span) noexcept nogil:
    cdef double sa[QUAD_STACK]
    cdef double sb[QUAD_STACK]
    cdef int sd[QUAD_STACK]
    cdef int top = 0
    cdef double total = 0.0
    cdef double lo, hi, kr, gr, tol, mid
    cdef int d
    sa[0] = a; sb[0] = b; sd[0] = 0
    top = 1
    while top > 0:
        top -= 1
        lo = sa[top]; hi = sb[top]; d = sd[top]
        gk15(f, lo, hi, &kr, &gr)
        tol = QUAD_ABS * (hi - lo) / span
        if QUAD_REL * fabs(kr) > tol:
            tol = QUAD_REL * fabs(kr)
        if fabs(kr - gr) <= tol or d >= QUAD_DEPTH or top + 2 > QUAD_STACK:
            total += kr
        else:
            mid = 0.5 * (lo + hi)
            sa[top] = mid; sb[top] = hi; sd[top] = d + 1
            sa[top + 1] = lo; sb[top + 1] = mid; sd[top + 1] = d + 1
            top += 2
    return total


cdef double integrate(const Integrand* f, const Model* m, double length) noexcept nogil:
    """Integral over [0, length] of the flow, split where an affine guard
    changes sign."""
    cdef double br[MAX_GUARDS + 2]
    cdef int nb = 0
    cdef int i, j
    cdef double g0, g1, r, tmp, total
    if length <= 0.0:
        return 0.0
    br[0] = 0.0
    nb = 1
    for i in range(m.nguards):
        g0 = run(&m.guards[i], f.n, f.x, f.y, f.t)
        g1 = run(&m.guards[i], f.n, f.x + f.busy, f.y + 1.0, f.t + 1.0)
        if g1 != g0:
            r = -g0 / (g1 - g0)
            if r > 0.0 and r < length:
                br[nb] = r
                nb += 1
    br[nb] = length
    nb += 1
    # insertion sort; nb is small
    for i in range(1, nb - 1):
        tmp = br[i]
        j = i - 1
        while j >= 1 and br[j] > tmp:
            br[j + 1] = br[j]
            j -= 1
        br[j + 1] = tmp
    total = 0.0
    for i in range(nb - 1):
        if br[i + 1] > br[i]:
            total += adapt(f, br[i], br[i + 1], length)
    return total


# ---------------------------------------------------------------- errors

def _raise(int rc, double[::1] err):
    from ._errors import raise_kernel_error
    raise_kernel_error(rc, err[0], err[1], err[2], err[3])


# ---------------------------------------------------------------- entry points

def eval_program(program, double n, double x, double y, double t=0.0):
    cdef _ProgHolder p = _ProgHolder(program)
    return run(&p.prog, n, x, y, t)


def integrated_hazard(km, double n, double x, double y, double length):
    cdef _ModelHolder mh = _ModelHolder(km)
    cdef Integrand f
    f.kind = INT_HAZARD
    f.m = &mh.m
    f.prog = NULL
    f.n = n; f.x = x; f.y = y; f.t = 0.0
    f.busy = 1.0 if n > 0 else 0.0
    return integrate(&f, &mh.m, length)


def integrated_program(km, program, double n, double x, double y, double t, double length):
    cdef _ModelHolder mh = _ModelHolder(km)
    cdef _ProgHolder p = _ProgHolder(program)
    cdef Integrand f
    f.kind = INT_PROGRAM
    f.m = &mh.m
    f.prog = &p.prog
    f.n = n; f.x = x; f.y = y; f.t = t
    f.busy = 1.0 if n > 0 else 0.0
    return integrate(&f, &mh.m, length)


def next_events(km, double n, double x, double y, Py_ssize_t count, bit_generator):
    """``count`` independent draws of (dt, kind) from the same state."""
    cdef _ModelHolder mh = _ModelHolder(km)
    cdef bitgen_t* rng = _bitgen(bit_generator)
    dts = np.empty(count, dtype=np.float64)
    kinds = np.empty(count, dtype=np.int8)
    cdef double[::1] dv = dts
    cdef signed char[::1] kv = kinds
    cdef double[::1] err = np.zeros(4)
    cdef double dt = 0.0
    cdef int kind = 0
    cdef int rc = OK
    cdef Py_ssize_t i
    with nogil:
        for i in range(count):
            rc = next_jump(&mh.m, rng, n, x, y, INFINITY, &dt, &kind, &err[0])
            if rc != OK:
                break
            dv[i] = dt
            kv[i] = kind
    if rc != OK:
        _raise(rc, err)
    return dts, kinds


def simulate_events(km, double n, double x, double y, double horizon, bit_generator,
                    Py_ssize_t max_events):
    """One path on [0, horizon]; returns event times, kinds and post-jump states."""
    cdef _ModelHolder mh = _ModelHolder(km)
    cdef bitgen_t* rng = _bitgen(bit_generator)
    cdef double[::1] err = np.zeros(4)
    cdef Py_ssize_t cap = 1024
    cdef Py_ssize_t cnt = 0
    cdef double* buf = <double*> malloc(cap * 5 * sizeof(double))
    cdef double* nbuf
    cdef double tm = 0.0
    cdef double dt = 0.0
    cdef double busy
    cdef int kind = 0
    cdef int rc = OK
    if buf == NULL:
        raise MemoryError()
    with nogil:
        while True:
            rc = next_jump(&mh.m, rng, n, x, y, horizon - tm, &dt, &kind, &err[0])
            if rc != OK:
                if rc == NO_EVENT:
                    rc = OK
                break
            if cnt >= max_events:
                rc = ERR_EVENTS
                err[0] = n; err[1] = x; err[2] = y; err[3] = tm
                break
            busy = 1.0 if n > 0 else 0.0
            tm += dt
            if kind == ARRIVAL:
                x = x + busy * dt
                y = 0.0
                n = n + 1.0
            else:
                n = n - 1.0
                x = 0.0
                y = y + dt
            if cnt == cap:
                cap *= 2
                nbuf = <double*> realloc(buf, cap * 5 * sizeof(double))
                if nbuf == NULL:
                    rc = ERR_EVENTS
                    break
                buf = nbuf
            buf[5 * cnt] = tm
            buf[5 * cnt + 1] = kind
            buf[5 * cnt + 2] = n
            buf[5 * cnt + 3] = x
            buf[5 * cnt + 4] = y
            cnt += 1
    out = np.empty((cnt, 5), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j
    for i in range(cnt):
        for j in range(5):
            ov[i, j] = buf[5 * i + j]
    free(buf)
    if rc != OK:
        _raise(rc, err)
    return out


def hitting_times(km, double n0, double x0, double y0, double cap, Py_ssize_t count, bit_generator):
    """First time n reaches 0; censored paths report ``cap`` and a flag."""
    cdef _ModelHolder mh = _ModelHolder(km)
    cdef bitgen_t* rng = _bitgen(bit_generator)
    taus = np.empty(count, dtype=np.float64)
    censored = np.zeros(count, dtype=np.uint8)
    cdef double[::1] tv = taus
    cdef unsigned char[::1] cv = censored
    cdef double[::1] err = np.zeros(4)
    cdef double n, x, y, tm, dt = 0.0, busy
    cdef int kind = 0
    cdef int rc = OK
    cdef Py_ssize_t i
    with nogil:
        for i in range(count):
            n = n0; x = x0; y = y0; tm = 0.0
            while n > 0:
                rc = next_jump(&mh.m, rng, n, x, y, cap - tm, &dt, &kind, &err[0])
                if rc == NO_EVENT:
                    rc = OK
                    tm = cap
                    cv[i] = 1
                    break
                if rc != OK:
                    break
                busy = 1.0 if n > 0 else 0.0
                tm += dt
                if kind == ARRIVAL:
                    x = x + busy * dt
                    y = 0.0
                    n = n + 1.0
                else:
                    n = n - 1.0
                    x = 0.0
                    y = y + dt
            if rc != OK:
                break
            tv[i] = tm
    if rc != OK:
        _raise(rc, err)
    return taus, censored


def n_at_time(km, double n0, double x0, double y0, double horizon, Py_ssize_t count, bit_generator):
    """Queue length at ``horizon`` for ``count`` independent paths."""
    cdef _ModelHolder mh = _ModelHolder(km)
    cdef bitgen_t* rng = _bitgen(bit_generator)
    out = np.empty(count, dtype=np.int64)
    cdef long long[::1] ov = out
    cdef double[::1] err = np.zeros(4)
    cdef double n, x, y, tm, dt = 0.0, busy
    cdef int kind = 0
    cdef int rc = OK
    cdef Py_ssize_t i
    with nogil:
        for i in range(count):
            n = n0; x = x0; y = y0; tm = 0.0
            while True:
                rc = next_jump(&mh.m, rng, n, x, y, horizon - tm, &dt, &kind, &err[0])
                if rc == NO_EVENT:
                    rc = OK
                    break
                if rc != OK:
                    break
                busy = 1.0 if n > 0 else 0.0
                tm += dt
                if kind == ARRIVAL:
                    x = x + busy * dt
                    y = 0.0
                    n = n + 1.0
                else:
                    n = n - 1.0
                    x = 0.0
                    y = y + dt
            if rc != OK:
                break
            ov[i] = <long long> n
    if rc != OK:
        _raise(rc, err)
    return out


def jump_counts(km, double n0, double x0, double y0, double delta, Py_ssize_t count, bit_generator):
    """Numbers of up- and down-jumps on (0, delta] per path."""
    cdef _ModelHolder mh = _ModelHolder(km)
    cdef bitgen_t* rng = _bitgen(bit_generator)
    ups = np.zeros(count, dtype=np.int32)
    downs = np.zeros(count, dtype=np.int32)
    cdef int[::1] uv = ups
    cdef int[::1] dv = downs
    cdef double[::1] err = np.zeros(4)
    cdef double n, x, y, tm, dt = 0.0, busy
    cdef int kind = 0
    cdef int rc = OK
    cdef Py_ssize_t i
    with nogil:
        for i in range(count):
            n = n0; x = x0; y = y0; tm = 0.0
            while True:
                rc = next_jump(&mh.m, rng, n, x, y, delta - tm, &dt, &kind, &err[0])
                if rc == NO_EVENT:
                    rc = OK
                    break
                if rc != OK:
                    break
                busy = 1.0 if n > 0 else 0.0
                tm += dt
                if kind == ARRIVAL:
                    uv[i] += 1
                    x = x + busy * dt
                    y = 0.0
                    n = n + 1.0
                else:
                    dv[i] += 1
                    n = n - 1.0
                    x = 0.0
                    y = y + dt
            if rc != OK:
                break
    if rc != OK:
        _raise(rc, err)
    return ups, downs


def cycles(km, Py_ssize_t warmup, Py_ssize_t count, Py_ssize_t levels, functionals,
           double max_length, bit_generator):
    """Regeneration cycles started from (1, 0, 0).

    Returns cycle lengths, occupation times per queue length (last column
    collects n >= levels) and per-cycle integrals of each functional.
    """
    cdef _ModelHolder mh = _ModelHolder(km)
    cdef bitgen_t* rng = _bitgen(bit_generator)
    cdef list holders = [_ProgHolder(p) for p in functionals]
    cdef Py_ssize_t nf = len(holders)
    if nf > MAX_FUNCTIONALS:
        raise ValueError(f"at most {MAX_FUNCTIONALS} functionals per run")
    cdef Prog progs[MAX_FUNCTIONALS]
    cdef _ProgHolder ph
    cdef Py_ssize_t q
    for q in range(nf):
        ph = holders[q]
        progs[q] = ph.prog
    lengths = np.zeros(count, dtype=np.float64)
    occ = np.zeros((count, levels + 1), dtype=np.float64)
    integ = np.zeros((count, nf), dtype=np.float64)
    cdef double[::1] lv = lengths
    cdef double[:, ::1] ov = occ
    cdef double[:, ::1] iv = integ
    cdef double[::1] err = np.zeros(4)
    cdef double[::1] acc_occ = np.zeros(levels + 1)
    cdef double[::1] acc_int = np.zeros(max(nf, 1))
    cdef double n = 1.0, x = 0.0, y = 0.0, dt = 0.0, busy, clen = 0.0
    cdef int kind = 0
    cdef int rc = OK
    cdef Py_ssize_t done = -warmup
    cdef Py_ssize_t lev, j
    cdef Integrand f
    f.kind = INT_PROGRAM
    f.m = &mh.m
    f.t = 0.0
    with nogil:
        while done < count:
            rc = next_jump(&mh.m, rng, n, x, y, max_length - clen, &dt, &kind, &err[0])
            if rc == NO_EVENT:
                rc = ERR_CYCLE
                err[0] = n; err[1] = x; err[2] = y; err[3] = max_length
            if rc != OK:
                break
            busy = 1.0 if n > 0 else 0.0
            lev = <Py_ssize_t> n
            if lev > levels:
                lev = levels
            acc_occ[lev] += dt
            f.n = n; f.x = x; f.y = y; f.busy = busy
            for j in range(nf):
                f.prog = &progs[j]
                acc_int[j] += integrate(&f, &mh.m, dt)
            clen += dt
            if kind == ARRIVAL:
                if n == 0.0:
                    if done >= 0:
                        lv[done] = clen
                        for j in range(levels + 1):
                            ov[done, j] = acc_occ[j]
                        for j in range(nf):
                            iv[done, j] = acc_int[j]
                    done += 1
                    clen = 0.0
                    for j in range(levels + 1):
                        acc_occ[j] = 0.0
                    for j in range(nf):
                        acc_int[j] = 0.0
                x = x + busy * dt
                y = 0.0
                n = n + 1.0
            else:
                n = n - 1.0
                x = 0.0
                y = y + dt
    if rc != OK:
        _raise(rc, err)
    return lengths, occ, integ


def dynkin(km, phi, double n0, double x0, double y0, double horizon, Py_ssize_t count, bit_generator):
    """Per-path residual phi(T, X_T) - phi(0, X_0) - int_0^T (d/ds + G) phi ds.

    The transport part of the integrand is a total derivative along the
    flow and is integrated exactly; the jump compensator uses adaptive
    Gauss-Kronrod on each inter-jump segment.
    """
    cdef _ModelHolder mh = _ModelHolder(km)
    cdef _ProgHolder ph = _ProgHolder(phi)
    cdef bitgen_t* rng = _bitgen(bit_generator)
    residuals = np.empty(count, dtype=np.float64)
    finals = np.empty(count, dtype=np.float64)
    cdef double[::1] rv = residuals
    cdef double[::1] fv = finals
    cdef double[::1] err = np.zeros(4)
    cdef double n, x, y, tm, dt = 0.0, busy, seg, tend, nx, ny, drift, comp, start, end
    cdef int kind = 0
    cdef int rc = OK
    cdef Py_ssize_t i
    cdef Integrand f
    f.kind = INT_COMPENSATOR
    f.m = &mh.m
    f.prog = &ph.prog
    with nogil:
        for i in range(count):
            n = n0; x = x0; y = y0; tm = 0.0
            drift = 0.0
            comp = 0.0
            start = run(&ph.prog, n, x, y, 0.0)
            while True:
                rc = next_jump(&mh.m, rng, n, x, y, horizon - tm, &dt, &kind, &err[0])
                if rc != OK and rc != NO_EVENT:
                    break
                seg = dt if rc == OK else horizon - tm
                tend = tm + seg if rc == OK else horizon
                busy = 1.0 if n > 0 else 0.0
                nx = x + busy * seg
                ny = y + seg
                drift += run(&ph.prog, n, nx, ny, tend) - run(&ph.prog, n, x, y, tm)
                f.n = n; f.x = x; f.y = y; f.t = tm; f.busy = busy
                comp += integrate(&f, &mh.m, seg)
                if rc == NO_EVENT:
                    rc = OK
                    x = nx
                    y = ny
                    tm = horizon
                    break
                tm = tend
                if kind == ARRIVAL:
                    x = nx
                    y = 0.0
                    n = n + 1.0
                else:
                    n = n - 1.0
                    x = 0.0
                    y = ny
            if rc != OK:
                break
            end = run(&ph.prog, n, x, y, horizon)
            fv[i] = end
            rv[i] = end - start - drift - comp
    if rc != OK:
        _raise(rc, err)
    return residuals, finals
