"""Compiled inner loop for the graph dual.

A dual set is packed into one int64 vector ``st`` of length nc + N + 3:
center membership flags, per-branch extents (EMPTY, FULL or prefix depth)
and a segment triple ``(branch, a, b)`` (branch -1 when unused, b = HALF
for a segment running to Delta). Candidate targets are written as full
state rows, so applying a move is a copy.

The kernel is resumable in the same way as the interval kernels.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from ._interval_kernels import (ABSORBED, HORIZON, N_FF, NEED_EXTEND, NEED_LOG, NEED_U,
                                NO_EXPLOSION, _count_pos, _logsum4, _pick, log_mass,
                                logaddexp)

__all__ = ["ABSORBED", "HORIZON", "NEED_EXTEND", "NEED_LOG", "NEED_U", "NO_EXPLOSION", "N_FF"]

EMPTY = -1
FULL = -2
HALF = -2

EV_DUAL = 1
EV_EXPLODE = 5

# ist slots
I_JEXC, I_NEV, I_JTOT, I_NEXP, I_UPOS, I_EVER, I_DROP, I_DEPTH = range(8)
# fst slots
F_T, F_INT, F_TABS, F_F0 = range(4)
# ipar slots
P_BUDGET, P_K, P_LOGCAP, P_M, P_NC, P_NB, P_STOPABS = range(7)
# fpar slots
Q_HORIZON, Q_LOGDELTA = range(2)

U_RESERVE = N_FF + 4
NEG_INF = -np.inf


def max_candidates(nc: int, N: int) -> int:
    return nc + 2 * N + nc * (nc + N) + 4


@njit(cache=True)
def f_count(st, nc, N, K):
    """f(Q) = min(|Q ∩ B_K|, K), B_K = center plus depths 0..K-1 of every branch."""
    c = 0
    for j in range(nc):
        c += st[j]
    for i in range(N):
        e = st[nc + i]
        if e == FULL:
            c += K
        elif e >= 0:
            c += min(e + 1, K)
    br = st[nc + N]
    if br >= 0:
        a = st[nc + N + 1]
        b = st[nc + N + 2]
        hi = K - 1 if b == HALF else min(b, K - 1)
        if hi >= a:
            c += hi - a + 1
    return min(c, K)


@njit(cache=True)
def _lmass(st, nc, N, lmc, off, blm, bL, bR, brt, btot):
    acc = NEG_INF
    for j in range(nc):
        if st[j] == 1:
            acc = logaddexp(acc, lmc[j])
    for i in range(N):
        e = st[nc + i]
        if e == FULL:
            acc = logaddexp(acc, off[i] + btot[i])
        elif e >= 0:
            acc = logaddexp(acc, off[i] + bL[i, e])
    br = st[nc + N]
    if br >= 0:
        a = st[nc + N + 1]
        b = st[nc + N + 2]
        if b == HALF:
            acc = logaddexp(acc, off[br] + bR[br, a])
        else:
            acc = logaddexp(acc, off[br] + log_mass(0, blm[br], bL[br], bR[br], NEG_INF,
                                                     brt[br], a, b, False, False))
    return acc


@njit(cache=True)
def _deltas(st, nc, N):
    m = 0
    for i in range(N):
        if st[nc + i] == FULL:
            m |= 1 << i
    br = st[nc + N]
    if br >= 0 and st[nc + N + 2] == HALF:
        m |= 1 << br
    return m


@njit(cache=True)
def _is_full(st, nc, N):
    for j in range(nc):
        if st[j] == 0:
            return False
    for i in range(N):
        if st[nc + i] != FULL:
            return False
    return True


@njit(cache=True)
def _emit(cst, clr, n, lbase, lq, nc, N, lmc, off, blm, bL, bR, brt, btot):
    clr[n] = _lmass(cst[n], nc, N, lmc, off, blm, bL, bR, brt, btot) - lq + lbase
    return n + 1


@njit(cache=True)
def candidates(st, lq, nc, N, lmc, lrc, nbr, att, lout0, lin0, off, blm, bL, bR, blb, bla,
               brt, btot, cst, clr, scratch):
    """Fill ``cst``/``clr`` with targets and log rates; returns their number.

    Order: center growth, branch growth, branch-tip removal, center-vertex
    removal (components by smallest vertex, then detached branches),
    segment moves (inward growth, outward growth, inner shrink, outer shrink).
    """
    n = 0
    S = nc + N + 3
    sg = nc + N
    if st[sg] < 0:
        for j in range(nc):
            if st[j] == 1:
                continue
            ls = NEG_INF
            for l in range(nc):
                if st[l] == 1 and nbr[j, l] == 1:
                    ls = logaddexp(ls, lrc[j, l])
            if ls > NEG_INF:
                cst[n, :S] = st[:S]
                cst[n, j] = 1
                n = _emit(cst, clr, n, ls, lq, nc, N, lmc, off, blm, bL, bR, brt, btot)
        for i in range(N):
            e = st[nc + i]
            if e == FULL or st[att[i]] == 0:
                continue
            cst[n, :S] = st[:S]
            if e == EMPTY:
                base = lin0[i]
                cst[n, nc + i] = 0
            else:
                base = bla[i, e + 1]
                cst[n, nc + i] = e + 1
            n = _emit(cst, clr, n, base, lq, nc, N, lmc, off, blm, bL, bR, brt, btot)
        for i in range(N):
            e = st[nc + i]
            if e >= 0:
                cst[n, :S] = st[:S]
                cst[n, nc + i] = e - 1 if e > 0 else EMPTY
                n = _emit(cst, clr, n, blb[i, e], lq, nc, N, lmc, off, blm, bL, bR, brt, btot)
        comp = scratch[:nc]
        stack = scratch[nc:2 * nc]
        for j in range(nc):
            if st[j] == 0:
                continue
            ls = NEG_INF
            for l in range(nc):
                if st[l] == 0 and nbr[j, l] == 1:
                    ls = logaddexp(ls, lrc[j, l])
            for i in range(N):
                if att[i] == j and st[nc + i] == EMPTY:
                    ls = logaddexp(ls, lout0[i])
            if ls == NEG_INF:
                continue
            # flood fill of the center part without j
            for l in range(nc):
                comp[l] = -1
            nlab = 0
            for s in range(nc):
                if st[s] == 0 or s == j or comp[s] >= 0:
                    continue
                comp[s] = nlab
                top = 0
                stack[0] = s
                top = 1
                while top > 0:
                    top -= 1
                    v = stack[top]
                    for w in range(nc):
                        if nbr[v, w] == 1 and st[w] == 1 and w != j and comp[w] < 0:
                            comp[w] = nlab
                            stack[top] = w
                            top += 1
                nlab += 1
            for c in range(nlab):
                cst[n, :S] = st[:S]
                for l in range(nc):
                    cst[n, l] = 1 if comp[l] == c else 0
                for i in range(N):
                    if comp[att[i]] != c:
                        cst[n, nc + i] = EMPTY
                n = _emit(cst, clr, n, ls, lq, nc, N, lmc, off, blm, bL, bR, brt, btot)
            for i in range(N):
                e = st[nc + i]
                if att[i] != j or e == EMPTY:
                    continue
                for l in range(nc + N):
                    cst[n, l] = 0 if l < nc else EMPTY
                cst[n, sg] = i
                cst[n, sg + 1] = 0
                cst[n, sg + 2] = HALF if e == FULL else e
                n = _emit(cst, clr, n, ls, lq, nc, N, lmc, off, blm, bL, bR, brt, btot)
    else:
        i = st[sg]
        a = st[sg + 1]
        b = st[sg + 2]
        cst[n, :S] = st[:S]
        if a >= 1:
            cst[n, sg + 1] = a - 1
            n = _emit(cst, clr, n, blb[i, a - 1], lq, nc, N, lmc, off, blm, bL, bR, brt, btot)
        else:
            cst[n, att[i]] = 1
            cst[n, nc + i] = FULL if b == HALF else b
            cst[n, sg] = -1
            cst[n, sg + 1] = 0
            cst[n, sg + 2] = 0
            n = _emit(cst, clr, n, lout0[i], lq, nc, N, lmc, off, blm, bL, bR, brt, btot)
        if b != HALF:
            cst[n, :S] = st[:S]
            cst[n, sg + 2] = b + 1
            n = _emit(cst, clr, n, bla[i, b + 1], lq, nc, N, lmc, off, blm, bL, bR, brt, btot)
        if b == HALF or a < b:
            cst[n, :S] = st[:S]
            cst[n, sg + 1] = a + 1
            base = bla[i, a] if a >= 1 else lin0[i]
            n = _emit(cst, clr, n, base, lq, nc, N, lmc, off, blm, bL, bR, brt, btot)
        if b != HALF and a < b:
            cst[n, :S] = st[:S]
            cst[n, sg + 2] = b - 1
            n = _emit(cst, clr, n, blb[i, b], lq, nc, N, lmc, off, blm, bL, bR, brt, btot)
    return n


@njit(cache=True)
def _generator_f(st, cst, clr, n, nc, N, K):
    f0 = f_count(st, nc, N, K)
    tot = 0.0
    for c in range(n):
        d = f_count(cst[c], nc, N, K) - f0
        if d != 0 and clr[c] > NEG_INF:
            tot += d * math.exp(clr[c])
    return tot


@njit(cache=True)
def _depth_needed(st, nc, N, blen):
    """Largest branch depth that must be inside the window, or -1 if all fit."""
    worst = -1
    for i in range(N):
        e = st[nc + i]
        if e >= 0 and e + N_FF + 3 >= blen[i]:
            worst = max(worst, e + N_FF + 3)
    br = st[nc + N]
    if br >= 0:
        a = st[nc + N + 1]
        b = st[nc + N + 2]
        top = a if b == HALF else b
        if top + N_FF + 3 >= blen[br]:
            worst = max(worst, top + N_FF + 3)
    return worst


@njit(cache=True)
def _log_event(st, ist, ipar, ev_t, ev_k, ev_s, t, kind, aux):
    if ipar[P_LOGCAP] == 0:
        return
    n = ist[I_NEV]
    ev_t[n] = t
    ev_k[n, 0] = kind
    ev_k[n, 1] = aux
    ev_s[n, :] = st[:]
    ist[I_NEV] = n + 1


@njit(cache=True, nogil=True)
def run_graph_dual(lmc, lrc, nbr, att, lout0, lin0, off, blm, bL, bR, blb, bla, bTR, brt, btot,
                   blen, ipar, fpar, st, ist, fst, ubuf, ev_t, ev_k, ev_s, cst, clr, scratch):
    """Stratified graph dual; returns a status code."""
    nc = ipar[P_NC]
    N = ipar[P_NB]
    K = ipar[P_K]
    M = ipar[P_M]
    sg = nc + N
    while True:
        if _is_full(st, nc, N):
            if math.isnan(fst[F_TABS]):
                fst[F_TABS] = fst[F_T]
            return ABSORBED
        d = _depth_needed(st, nc, N, blen)
        if d >= 0:
            ist[I_DEPTH] = d
            return NEED_EXTEND
        if ist[I_UPOS] + U_RESERVE > ubuf.shape[0]:
            return NEED_U
        if ipar[P_LOGCAP] > 0 and ist[I_NEV] + 2 > ev_t.shape[0]:
            return NEED_LOG
        # explosion of a branch end (branches in index order)
        side = -1
        k_end = 0
        for i in range(N):
            e = st[nc + i]
            if e >= M and bTR[i, e] < fpar[Q_LOGDELTA]:
                side = i
                k_end = e
                break
        if side < 0 and st[sg] >= 0:
            b = st[sg + 2]
            if b != HALF and b >= M and bTR[st[sg], b] < fpar[Q_LOGDELTA]:
                side = st[sg]
                k_end = b
        if side >= 0:
            lf = 0.0
            if K > 0:
                lq = _lmass(st, nc, N, lmc, off, blm, bL, bR, brt, btot)
                n = candidates(st, lq, nc, N, lmc, lrc, nbr, att, lout0, lin0, off, blm, bL,
                               bR, blb, bla, brt, btot, cst, clr, scratch)
                lf = _generator_f(st, cst, clr, n, nc, N, K)
            rem = 0.0
            for j in range(N_FF):
                u = ubuf[ist[I_UPOS] + j]
                rem += -math.log1p(-u) * math.exp(-bla[side, k_end + 1 + j])
            ist[I_UPOS] += N_FF
            t_new = fst[F_T] + rem
            if t_new > fpar[Q_HORIZON]:
                fst[F_INT] += (fpar[Q_HORIZON] - fst[F_T]) * lf
                fst[F_T] = fpar[Q_HORIZON]
                return HORIZON
            fst[F_INT] += rem * lf
            fst[F_T] = t_new
            if st[sg] >= 0:
                st[sg + 2] = HALF
            else:
                st[nc + side] = FULL
            ist[I_EVER] |= 1 << side
            ist[I_NEXP] += 1
            ist[I_JEXC] = 0
            _log_event(st, ist, ipar, ev_t, ev_k, ev_s, t_new, EV_EXPLODE, side)
            continue
        if ist[I_JEXC] >= ipar[P_BUDGET]:
            return NO_EXPLOSION
        lq = _lmass(st, nc, N, lmc, off, blm, bL, bR, brt, btot)
        n = candidates(st, lq, nc, N, lmc, lrc, nbr, att, lout0, lin0, off, blm, bL, bR,
                       blb, bla, brt, btot, cst, clr, scratch)
        r = clr[:n]
        ltot = _logsum4(r)
        if ltot == NEG_INF:
            return ABSORBED
        lf = _generator_f(st, cst, clr, n, nc, N, K) if K > 0 else 0.0
        u = ubuf[ist[I_UPOS]]
        ist[I_UPOS] += 1
        hold = -math.log1p(-u) * math.exp(-ltot)
        t_next = fst[F_T] + hold
        if t_next > fpar[Q_HORIZON]:
            fst[F_INT] += (fpar[Q_HORIZON] - fst[F_T]) * lf
            fst[F_T] = fpar[Q_HORIZON]
            return HORIZON
        fst[F_INT] += hold * lf
        fst[F_T] = t_next
        if _count_pos(r) > 1:
            k = _pick(r, ltot, ubuf[ist[I_UPOS]])
            ist[I_UPOS] += 1
        else:
            k = 0
            while r[k] == NEG_INF:
                k += 1
        before = _deltas(st, nc, N)
        st[:] = cst[k, :st.shape[0]]
        after = _deltas(st, nc, N)
        if before & ~after:
            ist[I_DROP] += 1
        ist[I_EVER] |= after
        ist[I_JEXC] += 1
        ist[I_JTOT] += 1
        _log_event(st, ist, ipar, ev_t, ev_k, ev_s, t_next, EV_DUAL, 0)
