"""Compiled kernels for ``min p^T z`` over a weighted-norm ball in the simplex.

Entries with an infinite weight are unreachable: they are pinned to zero and
dropped before optimizing.

Weighted L1 uses a homotopy on the multiplier ``mu`` of the budget
constraint. For fixed ``mu`` the cheapest receiver is ``argmin z_j + mu w_j``
and every state with ``z_i - mu w_i`` above that price is fully drained into
it. Walking ``mu`` downward from infinity, donors enter and the receiver
switches along the lower envelope of the lines ``z_j + mu w_j``; the budget
used grows monotonically. The optimum mixes the two partitions on either
side of the event where the budget is crossed, which keeps the norm linear
along the mix because no coordinate changes sign.

Weighted L-infinity is a box-constrained simplex LP solved greedily.
"""

import numpy as np
from numba import njit

L1 = 0
LINF = 1


@njit(cache=True)
def _l1_min(z, pb, w, psi, p):
    n = z.shape[0]
    for i in range(n):
        p[i] = pb[i]
    if n <= 1 or psi <= 0.0:
        return
    j = 0
    for i in range(1, n):
        if w[i] < w[j] or (w[i] == w[j] and z[i] < z[j]):
            j = i
    in_a = np.zeros(n, np.bool_)
    used = 0.0
    mass = 0.0
    mu_hi = np.inf
    ratios = np.empty(n)
    donors = np.empty(n, np.int64)
    while True:
        k = -1
        mu_sw = 0.0
        for t in range(n):
            if in_a[t] or not (w[t] > w[j] and z[t] < z[j]):
                continue
            m = min((z[j] - z[t]) / (w[t] - w[j]), mu_hi)
            if k == -1 or m > mu_sw or (m == mu_sw and w[t] > w[k]):
                k = t
                mu_sw = m
        cnt = 0
        for i in range(n):
            if i == j or in_a[i] or pb[i] <= 0.0:
                continue
            r = (z[i] - z[j]) / (w[i] + w[j])
            if r > mu_sw:
                ratios[cnt] = -r
                donors[cnt] = i
                cnt += 1
        order = np.argsort(ratios[:cnt], kind="mergesort")
        for q in range(cnt):
            i = donors[order[q]]
            step = pb[i] * (w[i] + w[j])
            if used + step >= psi:
                theta = (psi - used) / step
                for t in range(n):
                    if in_a[t]:
                        p[t] = 0.0
                p[j] += mass + theta * pb[i]
                p[i] = (1.0 - theta) * pb[i]
                return
            in_a[i] = True
            used += step
            mass += pb[i]
        if k == -1:
            break
        step = mass * (w[k] - w[j])
        if used + step >= psi:
            theta = (psi - used) / step
            for t in range(n):
                if in_a[t]:
                    p[t] = 0.0
            p[j] += (1.0 - theta) * mass
            p[k] += theta * mass
            return
        used += step
        j = k
        mu_hi = mu_sw
    # budget never binds: everything drains into the lowest-z receiver
    for t in range(n):
        if in_a[t]:
            p[t] = 0.0
    p[j] += mass


@njit(cache=True)
def _linf_min(z, pb, w, psi, p):
    n = z.shape[0]
    rem = 1.0
    hi = np.empty(n)
    for i in range(n):
        radius = psi / w[i]
        lo = max(0.0, pb[i] - radius)
        hi[i] = min(1.0, pb[i] + radius)
        p[i] = lo
        rem -= lo
    order = np.argsort(z, kind="mergesort")
    for q in range(n):
        if rem <= 0.0:
            break
        i = order[q]
        add = min(hi[i] - p[i], rem)
        p[i] += add
        rem -= add


@njit(cache=True)
def batch_min(kind, z, pb, w, psi, out_p):
    """Solve ``N`` independent inner problems row by row.

    Parameters are ``(N, S)`` arrays except ``psi`` of shape ``(N,)``;
    ``out_p`` receives the minimizing distributions. Returns the minima.
    """
    n_rows, n = z.shape
    values = np.empty(n_rows)
    idx = np.empty(n, np.int64)
    zz = np.empty(n)
    pp = np.empty(n)
    ww = np.empty(n)
    sol = np.empty(n)
    for row in range(n_rows):
        m = 0
        for i in range(n):
            out_p[row, i] = 0.0
            if np.isfinite(w[row, i]):
                idx[m] = i
                zz[m] = z[row, i]
                pp[m] = pb[row, i]
                ww[m] = w[row, i]
                m += 1
        if kind == L1:
            _l1_min(zz[:m], pp[:m], ww[:m], psi[row], sol[:m])
        else:
            _linf_min(zz[:m], pp[:m], ww[:m], psi[row], sol[:m])
        total = 0.0
        for q in range(m):
            out_p[row, idx[q]] = sol[q]
            total += sol[q] * zz[q]
        values[row] = total
    return values
