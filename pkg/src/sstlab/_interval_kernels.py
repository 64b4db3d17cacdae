"""Compiled inner loops for the interval dual (pure and coupled runs).

Kernels are resumable: they return a status code when they need more
uniforms, a wider measure window or more event-log capacity, and the
Python driver calls them again with the same state arrays. All randomness
comes from the caller's buffers, so a run is a deterministic function of
the uniform streams.

State layout (``ist`` int64, ``fst`` float64) is documented next to the
index constants below; ``par`` holds window/support/policy parameters.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# status codes
NEED_U = 1
NEED_EXTEND = 2
NEED_LOG = 3
ABSORBED = 10
HORIZON = 11
NO_EXPLOSION = 12

# event kinds
EV_START = 0
EV_DUAL = 1
EV_PRIMAL = 2
EV_JOINT = 3
EV_EXPLODE_LEFT = 4
EV_EXPLODE_RIGHT = 5
EV_ABSORB = 6

# ist slots
I_P, I_Q, I_PINF, I_QINF, I_JEXC, I_NEV, I_JTOT, I_NEXP, I_UPOS, I_X, I_VPOS, I_PEND = range(12)
# fst slots
F_T, F_INT, F_TEXPL, F_TEXPR, F_TABS, F_SIGMA, F_TPEND, F_F0 = range(8)
# ipar slots
P_LO, P_BUDGET, P_K, P_HASLO, P_SLO, P_HASHI, P_SHI, P_LOGCAP, P_STOPABS, P_M = range(10)
# fpar slots
Q_HORIZON, Q_LOGDELTA = range(2)

N_FF = 16          # exponentials drawn explicitly in an explosion fast-forward
U_RESERVE = N_FF + 4
NEG_INF = -np.inf


@njit(cache=True)
def logaddexp(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@njit(cache=True)
def log1mexp(d):
    """log(1 - exp(d)) for d <= 0."""
    if d > 0.0:
        d = 0.0
    if d > -0.6931471805599453:
        x = -math.expm1(d)
        return math.log(x) if x > 0.0 else NEG_INF
    return math.log1p(-math.exp(d))


@njit(cache=True)
def log_mass(lo, lm, L, R, lt, rt, p, q, pinf, qinf):
    """log mu([p, q]) from window arrays; see measure.interval_log_mass."""
    if pinf and qinf:
        return logaddexp(L[L.shape[0] - 1], rt)
    if pinf:
        return L[q - lo]
    if qinf:
        return R[p - lo]
    kp = p - lo
    kq = q - lo
    if kq - kp < 48:
        m = lm[kp]
        for k in range(kp + 1, kq + 1):
            if lm[k] > m:
                m = lm[k]
        s = 0.0
        for k in range(kp, kq + 1):
            s += math.exp(lm[k] - m)
        return m + math.log(s)
    left_below = L[kp - 1] if kp >= 1 else lt
    right_above = R[kq + 1] if kq + 1 < R.shape[0] else rt
    dl = left_below - L[kq]
    dr = right_above - R[kp]
    if dl <= dr:
        return L[kq] + log1mexp(dl)
    return R[kp] + log1mexp(dr)


@njit(cache=True)
def dual_log_rates(lo, lm, L, R, lb, la, lt, rt, ipar, p, q, pinf, qinf, out):
    """Fill ``out[0:4]`` with log rates (grow-left, grow-right, shrink-left,
    shrink-right) of the interval dual at (p, q). Returns log mu([p, q])."""
    mq = log_mass(lo, lm, L, R, lt, rt, p, q, pinf, qinf)
    for k in range(4):
        out[k] = NEG_INF
    if not pinf:
        if ipar[P_HASLO] == 0 or p > ipar[P_SLO]:
            k = p - 1 - lo
            out[0] = lb[k] + math.log1p(math.exp(lm[k] - mq))
        if qinf or p < q:
            k = p - lo
            out[2] = la[k] + log1mexp(lm[k] - mq)
    if not qinf:
        if ipar[P_HASHI] == 0 or q < ipar[P_SHI]:
            k = q + 1 - lo
            out[1] = la[k] + math.log1p(math.exp(lm[k] - mq))
        if pinf or p < q:
            k = q - lo
            out[3] = lb[k] + log1mexp(lm[k] - mq)
    return mq


@njit(cache=True)
def _logsum4(r):
    m = NEG_INF
    for k in range(r.shape[0]):
        if r[k] > m:
            m = r[k]
    if m == NEG_INF:
        return m
    s = 0.0
    for k in range(r.shape[0]):
        s += math.exp(r[k] - m)
    return m + math.log(s)


@njit(cache=True)
def _pick(r, lt, u):
    """Index drawn with weights exp(r) using a single uniform u."""
    m = NEG_INF
    for k in range(r.shape[0]):
        if r[k] > m:
            m = r[k]
    s = 0.0
    for k in range(r.shape[0]):
        s += math.exp(r[k] - m)
    target = u * s
    acc = 0.0
    last = -1
    for k in range(r.shape[0]):
        if r[k] > NEG_INF:
            acc += math.exp(r[k] - m)
            last = k
            if target < acc:
                return k
    return last


@njit(cache=True)
def _count_pos(r):
    c = 0
    for k in range(r.shape[0]):
        if r[k] > NEG_INF:
            c += 1
    return c


@njit(cache=True)
def _f_interval(p, q, pinf, qinf, K):
    """f(Q) = min(|Q ∩ [-K, K]|, K)."""
    a = -K if pinf else max(p, -K)
    b = K if qinf else min(q, K)
    n = b - a + 1
    if n < 0:
        n = 0
    return min(n, K)


@njit(cache=True)
def _generator_f(r, p, q, pinf, qinf, K):
    """(L* f)(Q) for the martingale check; moves not changing f are skipped."""
    f0 = _f_interval(p, q, pinf, qinf, K)
    tot = 0.0
    if r[0] > NEG_INF:
        d = _f_interval(p - 1, q, pinf, qinf, K) - f0
        if d != 0:
            tot += d * math.exp(r[0])
    if r[1] > NEG_INF:
        d = _f_interval(p, q + 1, pinf, qinf, K) - f0
        if d != 0:
            tot += d * math.exp(r[1])
    if r[2] > NEG_INF:
        d = _f_interval(p + 1, q, pinf, qinf, K) - f0
        if d != 0:
            tot += d * math.exp(r[2])
    if r[3] > NEG_INF:
        d = _f_interval(p, q - 1, pinf, qinf, K) - f0
        if d != 0:
            tot += d * math.exp(r[3])
    return tot


@njit(cache=True)
def _log_event(ist, ipar, ev_t, ev_i, t, kind):
    n = ist[I_NEV]
    if ipar[P_LOGCAP] == 0:
        return True
    if n >= ev_t.shape[0]:
        return False
    ev_t[n] = t
    ev_i[n, 0] = ist[I_P]
    ev_i[n, 1] = ist[I_Q]
    ev_i[n, 2] = ist[I_PINF] + 2 * ist[I_QINF]
    ev_i[n, 3] = kind
    ev_i[n, 4] = ist[I_X]
    ist[I_NEV] = n + 1
    return True


@njit(cache=True)
def _fast_forward(ubuf, upos, lla, start, step, lo):
    """Explosion remainder: N_FF explicit exponential passages along the
    outward base rates, starting from window index ``start``."""
    s = 0.0
    k = start
    for j in range(N_FF):
        u = ubuf[upos + j]
        s += -math.log1p(-u) * math.exp(-lla[k])
        k += step
    return s


@njit(cache=True)
def _explosion_due(ist, ipar, fpar, TL, TR, lo, side):
    M = ipar[P_M]
    if side == 1:
        if ist[I_QINF] == 1 or ist[I_Q] < M:
            return False
        return TR[ist[I_Q] - lo] < fpar[Q_LOGDELTA]
    if ist[I_PINF] == 1 or -ist[I_P] < M:
        return False
    return TL[ist[I_P] - lo] < fpar[Q_LOGDELTA]


@njit(cache=True)
def _is_full(ist, ipar):
    if ist[I_PINF] == 1 and ist[I_QINF] == 1:
        return True
    return (ipar[P_HASLO] == 1 and ipar[P_HASHI] == 1 and ist[I_P] == ipar[P_SLO]
            and ist[I_Q] == ipar[P_SHI] and ist[I_PINF] == 0 and ist[I_QINF] == 0)


@njit(cache=True, nogil=True)
def run_dual(lo, lm, L, R, lb, la, lt, rt, TL, TR, ipar, fpar, ist, fst, ubuf, ev_t, ev_i):
    """Stratified interval dual; returns a status code."""
    r = np.empty(4)
    hi = lo + lm.shape[0] - 1
    K = ipar[P_K]
    while True:
        if _is_full(ist, ipar):
            if math.isnan(fst[F_TABS]):
                fst[F_TABS] = fst[F_T]
            return ABSORBED
        p, q, pinf, qinf = ist[I_P], ist[I_Q], ist[I_PINF] == 1, ist[I_QINF] == 1
        if (not pinf and p - 1 - N_FF - 1 < lo and ipar[P_HASLO] == 0) or \
                (not qinf and q + 1 + N_FF + 1 > hi and ipar[P_HASHI] == 0):
            return NEED_EXTEND
        if ist[I_UPOS] + U_RESERVE > ubuf.shape[0]:
            return NEED_U
        if ipar[P_LOGCAP] > 0 and ist[I_NEV] + 2 > ev_t.shape[0]:
            return NEED_LOG
        # explosions (right first); each restarts the process in a higher stratum
        exploded = False
        for side in (1, -1):
            if _explosion_due(ist, ipar, fpar, TL, TR, lo, side):
                dual_log_rates(lo, lm, L, R, lb, la, lt, rt, ipar, ist[I_P], ist[I_Q],
                               ist[I_PINF] == 1, ist[I_QINF] == 1, r)
                if side == 1:
                    rem = _fast_forward(ubuf, ist[I_UPOS], la, ist[I_Q] + 1 - lo, 1, lo)
                else:
                    rem = _fast_forward(ubuf, ist[I_UPOS], lb, ist[I_P] - 1 - lo, -1, lo)
                ist[I_UPOS] += N_FF
                t_new = fst[F_T] + rem
                if t_new > fpar[Q_HORIZON]:
                    if K > 0:
                        fst[F_INT] += (fpar[Q_HORIZON] - fst[F_T]) * _generator_f(
                            r, ist[I_P], ist[I_Q], ist[I_PINF] == 1, ist[I_QINF] == 1, K)
                    fst[F_T] = fpar[Q_HORIZON]
                    return HORIZON
                if K > 0:
                    fst[F_INT] += rem * _generator_f(r, ist[I_P], ist[I_Q], ist[I_PINF] == 1,
                                                     ist[I_QINF] == 1, K)
                fst[F_T] = t_new
                if side == 1:
                    ist[I_QINF] = 1
                    fst[F_TEXPR] = t_new
                    _log_event(ist, ipar, ev_t, ev_i, t_new, EV_EXPLODE_RIGHT)
                else:
                    ist[I_PINF] = 1
                    fst[F_TEXPL] = t_new
                    _log_event(ist, ipar, ev_t, ev_i, t_new, EV_EXPLODE_LEFT)
                ist[I_NEXP] += 1
                ist[I_JEXC] = 0
                exploded = True
                break
        if exploded:
            continue
        if ist[I_JEXC] >= ipar[P_BUDGET]:
            return NO_EXPLOSION
        dual_log_rates(lo, lm, L, R, lb, la, lt, rt, ipar, p, q, pinf, qinf, r)
        ltot = _logsum4(r)
        if ltot == NEG_INF:
            return ABSORBED
        u = ubuf[ist[I_UPOS]]
        ist[I_UPOS] += 1
        hold = -math.log1p(-u) * math.exp(-ltot)
        t_next = fst[F_T] + hold
        if t_next > fpar[Q_HORIZON]:
            if K > 0:
                fst[F_INT] += (fpar[Q_HORIZON] - fst[F_T]) * _generator_f(r, p, q, pinf, qinf, K)
            fst[F_T] = fpar[Q_HORIZON]
            return HORIZON
        if K > 0:
            fst[F_INT] += hold * _generator_f(r, p, q, pinf, qinf, K)
        fst[F_T] = t_next
        if _count_pos(r) > 1:
            k = _pick(r, ltot, ubuf[ist[I_UPOS]])
            ist[I_UPOS] += 1
        else:
            k = _pick(r, ltot, 0.0)
        if k == 0:
            ist[I_P] = p - 1
        elif k == 1:
            ist[I_Q] = q + 1
        elif k == 2:
            ist[I_P] = p + 1
        else:
            ist[I_Q] = q - 1
        ist[I_JEXC] += 1
        ist[I_JTOT] += 1
        _log_event(ist, ipar, ev_t, ev_i, t_next, EV_DUAL)


@njit(cache=True)
def _coupled_dual_rates(lb, la, lo, ipar, p, q, pinf, qinf, x, out):
    """Log rates of dual-only moves of the coupled chain at (x, [p, q]).

    For Lambda = mu restricted to Q the factor Lambda(Q', x)/Lambda(Q, x) is
    mu(Q)/mu(Q'), which cancels the mass ratio of the dual rate: the moves
    run at the base rates b_{p-1}, a_{q+1}, a_p, b_q (shrinks only when x
    stays inside).
    """
    for k in range(4):
        out[k] = NEG_INF
    if not pinf:
        if ipar[P_HASLO] == 0 or p > ipar[P_SLO]:
            out[0] = lb[p - 1 - lo]
        if (qinf or p < q) and x != p:
            out[2] = la[p - lo]
    if not qinf:
        if ipar[P_HASHI] == 0 or q < ipar[P_SHI]:
            out[1] = la[q + 1 - lo]
        if (pinf or p < q) and x != q:
            out[3] = lb[q - lo]


@njit(cache=True)
def _primal_hold(lb, la, lo, x, u):
    return -math.log1p(-u) / (math.exp(la[x - lo]) + math.exp(lb[x - lo]))


@njit(cache=True)
def _primal_step(lb, la, lo, x, vbuf, ist):
    """Primal birth-death jump (row order: down, up); one uniform unless the
    row has a single entry."""
    a = math.exp(la[x - lo])
    b = math.exp(lb[x - lo])
    if a > 0.0 and b > 0.0:
        u = vbuf[ist[I_VPOS]]
        ist[I_VPOS] += 1
        return x - 1 if u * (a + b) < a else x + 1
    return x - 1 if a > 0.0 else x + 1


@njit(cache=True)
def _apply_primal(ist, y):
    """Move the primal to y; the dual grows to contain y if it left Q
    (the joint move, taken with probability one for intervals)."""
    ist[I_X] = y
    if ist[I_QINF] == 0 and y > ist[I_Q]:
        ist[I_Q] = y
        return EV_JOINT
    if ist[I_PINF] == 0 and y < ist[I_P]:
        ist[I_P] = y
        return EV_JOINT
    return EV_PRIMAL


@njit(cache=True, nogil=True)
def run_coupled(lo, lm, L, R, lb, la, lt, rt, TL, TR, ipar, fpar, ist, fst, ubuf, vbuf,
                ev_t, ev_i):
    """Coupled (X, X*) run on Z. ``ubuf`` feeds the dual, ``vbuf`` the primal.

    ``fst[F_SIGMA]`` is the next primal jump time (NaN until first drawn);
    a pending explosion (``ist[I_PEND]`` = side) resumes after refills.
    """
    r = np.empty(4)
    hi = lo + lm.shape[0] - 1
    horizon = fpar[Q_HORIZON]
    while True:
        x = ist[I_X]
        if x - 2 < lo and ipar[P_HASLO] == 0 or x + 2 > hi and ipar[P_HASHI] == 0:
            return NEED_EXTEND
        if ist[I_VPOS] + 4 > vbuf.shape[0]:
            return NEED_U
        if math.isnan(fst[F_SIGMA]):
            fst[F_SIGMA] = fst[F_T] + _primal_hold(lb, la, lo, x, vbuf[ist[I_VPOS]])
            ist[I_VPOS] += 1
        if ist[I_PEND] != 0:
            # finish a declared explosion: primal jumps before it are applied
            while fst[F_SIGMA] <= fst[F_TPEND] and fst[F_SIGMA] <= horizon:
                if ist[I_VPOS] + 4 > vbuf.shape[0]:
                    return NEED_U
                if ipar[P_LOGCAP] > 0 and ist[I_NEV] + 2 > ev_t.shape[0]:
                    return NEED_LOG
                x = ist[I_X]
                if x - 2 < lo and ipar[P_HASLO] == 0 or x + 2 > hi and ipar[P_HASHI] == 0:
                    return NEED_EXTEND
                fst[F_T] = fst[F_SIGMA]
                y = _primal_step(lb, la, lo, x, vbuf, ist)
                kind = _apply_primal(ist, y)
                _log_event(ist, ipar, ev_t, ev_i, fst[F_T], kind)
                fst[F_SIGMA] = fst[F_T] + _primal_hold(lb, la, lo, y, vbuf[ist[I_VPOS]])
                ist[I_VPOS] += 1
            if fst[F_TPEND] > horizon:
                fst[F_T] = horizon
                return HORIZON
            fst[F_T] = fst[F_TPEND]
            if ist[I_PEND] == 1:
                ist[I_QINF] = 1
                fst[F_TEXPR] = fst[F_T]
                _log_event(ist, ipar, ev_t, ev_i, fst[F_T], EV_EXPLODE_RIGHT)
            else:
                ist[I_PINF] = 1
                fst[F_TEXPL] = fst[F_T]
                _log_event(ist, ipar, ev_t, ev_i, fst[F_T], EV_EXPLODE_LEFT)
            ist[I_PEND] = 0
            ist[I_NEXP] += 1
            ist[I_JEXC] = 0
            continue
        if _is_full(ist, ipar):
            if math.isnan(fst[F_TABS]):
                fst[F_TABS] = fst[F_T]
            if ipar[P_STOPABS] == 1:
                return ABSORBED
        p, q, pinf, qinf = ist[I_P], ist[I_Q], ist[I_PINF] == 1, ist[I_QINF] == 1
        if (not pinf and p - 1 - N_FF - 1 < lo and ipar[P_HASLO] == 0) or \
                (not qinf and q + 1 + N_FF + 1 > hi and ipar[P_HASHI] == 0):
            return NEED_EXTEND
        if ist[I_UPOS] + U_RESERVE > ubuf.shape[0]:
            return NEED_U
        if ipar[P_LOGCAP] > 0 and ist[I_NEV] + 2 > ev_t.shape[0]:
            return NEED_LOG
        declared = False
        for side in (1, -1):
            if _explosion_due(ist, ipar, fpar, TL, TR, lo, side):
                if side == 1:
                    rem = _fast_forward(ubuf, ist[I_UPOS], la, q + 1 - lo, 1, lo)
                else:
                    rem = _fast_forward(ubuf, ist[I_UPOS], lb, p - 1 - lo, -1, lo)
                ist[I_UPOS] += N_FF
                ist[I_PEND] = side
                fst[F_TPEND] = fst[F_T] + rem
                declared = True
                break
        if declared:
            continue
        if ist[I_JEXC] >= ipar[P_BUDGET]:
            return NO_EXPLOSION
        _coupled_dual_rates(lb, la, lo, ipar, p, q, pinf, qinf, x, r)
        ltot = _logsum4(r)
        if ltot == NEG_INF:
            eps = np.inf
        else:
            eps = -math.log1p(-ubuf[ist[I_UPOS]]) * math.exp(-ltot)
            ist[I_UPOS] += 1
        if fst[F_T] + eps > fst[F_SIGMA]:
            # the primal jumps first
            if fst[F_SIGMA] > horizon:
                fst[F_T] = horizon
                return HORIZON
            fst[F_T] = fst[F_SIGMA]
            y = _primal_step(lb, la, lo, x, vbuf, ist)
            kind = _apply_primal(ist, y)
            if kind == EV_JOINT:
                ist[I_JEXC] += 1
                ist[I_JTOT] += 1
            _log_event(ist, ipar, ev_t, ev_i, fst[F_T], kind)
            fst[F_SIGMA] = fst[F_T] + _primal_hold(lb, la, lo, y, vbuf[ist[I_VPOS]])
            ist[I_VPOS] += 1
        else:
            t_next = fst[F_T] + eps
            if t_next > horizon:
                fst[F_T] = horizon
                return HORIZON
            fst[F_T] = t_next
            if _count_pos(r) > 1:
                k = _pick(r, ltot, ubuf[ist[I_UPOS]])
                ist[I_UPOS] += 1
            else:
                k = _pick(r, ltot, 0.0)
            if k == 0:
                ist[I_P] = p - 1
            elif k == 1:
                ist[I_Q] = q + 1
            elif k == 2:
                ist[I_P] = p + 1
            else:
                ist[I_Q] = q - 1
            ist[I_JEXC] += 1
            ist[I_JTOT] += 1
            _log_event(ist, ipar, ev_t, ev_i, t_next, EV_DUAL)
