"""Compiled charge-sector two-site update used in the TEBD hot loop.

Same algorithm as ``mps._sector_update``; bond charges must be sorted
ascending so each sector is a contiguous index range.
"""

from __future__ import annotations

import numpy as np
from numba import njit
from numba.typed import List

SMALL_PRODUCT = 512  # below this many multiply-adds plain loops beat a BLAS call


@njit(cache=True)
def _ranges(q):
    n = len(q)
    cnt = 0
    for i in range(n):
        if i == 0 or q[i] != q[i - 1]:
            cnt += 1
    vals = np.empty(cnt, np.int64)
    start = np.empty(cnt, np.int64)
    stop = np.empty(cnt, np.int64)
    k = -1
    for i in range(n):
        if i == 0 or q[i] != q[i - 1]:
            k += 1
            vals[k] = q[i]
            start[k] = i
        stop[k] = i + 1
    return vals, start, stop


@njit(cache=True)
def _find(vals, v):
    # linear scan: there are only a handful of sectors
    for i in range(len(vals)):
        if vals[i] == v:
            return i
    return -1


@njit(cache=True)
def sector_gate(A, B, lam, ql, qm, qr, glo, gnr, gmat, chi_max, cutoff, zero_sv):
    """Returns (new left tensor, new right tensor, Schmidt values, charges, discarded weight)."""
    chl, d1, _ = A.shape
    d2, chr_ = B.shape[1], B.shape[2]
    lv, ls, le = _ranges(ql)
    mv, ms, me = _ranges(qm)
    rv, rs, re = _ranges(qr)
    nl, nr = len(lv), len(rv)
    cmin = max(lv[0], rv[0] - d2 + 1)
    cmax = min(lv[nl - 1] + d1 - 1, rv[nr - 1])
    nc = cmax - cmin + 1
    if nc <= 0:
        raise ValueError("two-site tensor has no allowed charge block")

    # row (col) offset of each left (right) sector inside the block of each middle charge
    rowpos = np.full((nc, nl), -1, np.int64)
    colpos = np.full((nc, nr), -1, np.int64)
    rdim = np.zeros(nc, np.int64)
    cdim = np.zeros(nc, np.int64)
    for ic in range(nc):
        c = cmin + ic
        for ia in range(nl):
            if 0 <= c - lv[ia] < d1:
                rowpos[ic, ia] = rdim[ic]
                rdim[ic] += le[ia] - ls[ia]
        for ib in range(nr):
            if 0 <= rv[ib] - c < d2:
                colpos[ic, ib] = cdim[ic]
                cdim[ic] += re[ib] - rs[ib]
    blocks = List()
    for ic in range(nc):
        blocks.append(np.zeros((rdim[ic], cdim[ic]), np.complex128))
    touched = np.zeros(nc, np.bool_)

    for ia in range(nl):
        al = lv[ia]
        a0, a1 = ls[ia], le[ia]
        for ib in range(nr):
            be = rv[ib]
            tot = be - al
            if tot < 0 or tot > d1 + d2 - 2:
                continue
            lo = glo[tot]
            nrr = gnr[tot]
            b0, b1 = rs[ib], re[ib]
            P = np.zeros((nrr, a1 - a0, b1 - b0), np.complex128)
            hit = False
            for i in range(nrr):
                n1 = lo + i
                im = _find(mv, al + n1)
                if im < 0:
                    continue
                m0, m1 = ms[im], me[im]
                n2 = tot - n1
                if (a1 - a0) * (m1 - m0) * (b1 - b0) <= SMALL_PRODUCT:
                    for x in range(a1 - a0):
                        for m in range(m0, m1):
                            av = A[a0 + x, n1, m]
                            for y in range(b1 - b0):
                                P[i, x, y] += av * B[m, n2, b0 + y]
                else:
                    Ab = np.ascontiguousarray(A[a0:a1, n1, m0:m1])
                    Bb = np.ascontiguousarray(B[m0:m1, n2, b0:b1])
                    P[i] = np.dot(Ab, Bb)
                hit = True
            if not hit:
                continue
            for o in range(nrr):
                ic = al + lo + o - cmin
                r0 = rowpos[ic, ia]
                c0 = colpos[ic, ib]
                blk = blocks[ic]
                touched[ic] = True
                for i in range(nrr):
                    gv = gmat[tot, o, i]
                    if gv == 0:
                        continue
                    blk[r0:r0 + a1 - a0, c0:c0 + b1 - b0] += gv * P[i]

    # SVD of every block, rows weighted by the left Schmidt values
    svals = List()
    vhs = List()
    nsv = 0
    for ic in range(nc):
        if not touched[ic] or rdim[ic] == 0 or cdim[ic] == 0:
            svals.append(np.zeros(0))
            vhs.append(np.zeros((0, cdim[ic]), np.complex128))
            continue
        M = blocks[ic]
        scaled = M.copy()
        for ia in range(nl):
            r0 = rowpos[ic, ia]
            if r0 < 0:
                continue
            for j in range(le[ia] - ls[ia]):
                scaled[r0 + j, :] *= lam[ls[ia] + j]
        _, s, vh = np.linalg.svd(scaled, full_matrices=False)
        svals.append(np.ascontiguousarray(s))
        vhs.append(np.ascontiguousarray(vh))
        nsv += len(s)
    if nsv == 0:
        raise ValueError("two-site tensor has no allowed charge block")

    s_all = np.empty(nsv)
    sector = np.empty(nsv, np.int64)
    k = 0
    for ic in range(nc):
        s = svals[ic]
        for j in range(len(s)):
            s_all[k] = s[j]
            sector[k] = ic
            k += 1
    order = np.argsort(-s_all, kind="mergesort")
    w = s_all[order] ** 2
    total = w.sum()
    smax = s_all[order[0]]
    keep = 0
    for j in range(nsv):
        if s_all[order[j]] > zero_sv * smax:
            keep += 1
    keep = max(keep, 1)
    if cutoff > 0 and total > 0:
        tail = 0.0
        first = -1
        for j in range(nsv - 1, -1, -1):
            tail += w[j] / total
            if tail <= cutoff:
                first = j
            else:
                break
        if first >= 0:
            keep = min(keep, max(first, 1))
    keep = min(keep, chi_max)
    kept_w = w[:keep].sum()
    discarded = max(0.0, (total - kept_w) / total) if total > 0 else 0.0
    nrm = np.sqrt(kept_w)
    counts = np.zeros(nc, np.int64)
    for j in range(keep):
        counts[sector[order[j]]] += 1

    newA = np.zeros((chl, d1, keep), np.complex128)
    newB = np.zeros((keep, d2, chr_), np.complex128)
    newS = np.zeros(keep)
    newq = np.zeros(keep, np.int64)
    off = 0
    for ic in range(nc):
        kc = counts[ic]
        if kc == 0:
            continue
        c = cmin + ic
        vk = np.ascontiguousarray(vhs[ic][:kc])
        X = np.dot(blocks[ic], np.ascontiguousarray(vk.conj().T)) / nrm
        for ia in range(nl):
            r0 = rowpos[ic, ia]
            if r0 < 0:
                continue
            n1 = c - lv[ia]
            for j in range(le[ia] - ls[ia]):
                newA[ls[ia] + j, n1, off:off + kc] = X[r0 + j]
        for ib in range(nr):
            c0 = colpos[ic, ib]
            if c0 < 0:
                continue
            n2 = rv[ib] - c
            for j in range(re[ib] - rs[ib]):
                newB[off:off + kc, n2, rs[ib] + j] = vk[:, c0 + j]
        newS[off:off + kc] = svals[ic][:kc] / nrm
        newq[off:off + kc] = c
        off += kc
    return newA, newB, newS, newq, discarded
