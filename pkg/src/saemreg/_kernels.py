"""Compiled inner loops: Cox--de Boor evaluation and the per-curve MCMC sweep.

Inputs are assumed validated by the callers; nothing here checks shapes.
"""

import numba as nb
import numpy as np


@nb.njit(cache=True)
def find_span(knots, order, K, t):
    # largest i in [order-1, K-1] with knots[i] <= t; t = 1 maps to the last span
    lo = order - 1
    hi = K - 1
    if t >= knots[hi]:
        return hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if knots[mid] <= t:
            lo = mid
        else:
            hi = mid
    return lo


@nb.njit(cache=True)
def basis_at(knots, order, K, t, out, left, right):
    """Write the ``order`` nonzero basis values at t into ``out``; return the first index."""
    s = find_span(knots, order, K, t)
    out[0] = 1.0
    for j in range(1, order):
        left[j] = t - knots[s + 1 - j]
        right[j] = knots[s + j] - t
        saved = 0.0
        for r in range(j):
            temp = out[r] / (right[r + 1] + left[j - r])
            out[r] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        out[j] = saved
    return s - order + 1


@nb.njit(cache=True)
def local_basis(knots, order, ts, first, vals):
    K = knots.shape[0] - order
    left = np.empty(order)
    right = np.empty(order)
    for i in range(ts.shape[0]):
        first[i] = basis_at(knots, order, K, ts[i], vals[i], left, right)


@nb.njit(cache=True)
def _draw_a(i, s, e, ys, f, sigma2, Sinv, b0c, b1c, z0, z1, a, jitter):
    n = e - s
    sf = 0.0
    sff = 0.0
    sy = 0.0
    sfy = 0.0
    for j in range(s, e):
        fj = f[j]
        sf += fj
        sff += fj * fj
        sy += ys[j]
        sfy += fj * ys[j]
    p00 = n / sigma2 + Sinv[0, 0]
    p01 = sf / sigma2 + Sinv[0, 1]
    p11 = sff / sigma2 + Sinv[1, 1]
    if jitter:
        eps = 1e-10 * (p00 + p11)
        p00 += eps
        p11 += eps
    det = p00 * p11 - p01 * p01
    if not det > 0.0:
        return False
    c00 = p11 / det
    c01 = -p01 / det
    c11 = p00 / det
    b0 = sy / sigma2 + b0c
    b1 = sfy / sigma2 + b1c
    if not c00 > 0.0:
        return False
    l00 = np.sqrt(c00)
    l10 = c01 / l00
    rem = c11 - l10 * l10
    if not rem > 0.0:
        return False
    l11 = np.sqrt(rem)
    a[i, 0] = c00 * b0 + c01 * b1 + l00 * z0
    a[i, 1] = c01 * b0 + c11 * b1 + l10 * z0 + l11 * z1
    return np.isfinite(a[i, 0]) and np.isfinite(a[i, 1])


@nb.njit(cache=True)
def sweep(ys, offsets, tail, knots, order, alpha, sigma2, Sinv, mu0, conc,
          a, w, f, first, vals, sigma_q, z, u, accepted, do_gibbs, do_mh):
    """Advance every curve's chain ``z.shape[0]`` Gibbs/MH rounds in place.

    ``z[r, i]`` holds two normals for the amplitude draw followed by ``d``
    normals for the warp proposal; ``u[r, i]`` is the acceptance uniform.
    Returns -1 on success or the index of a curve whose amplitude
    conditional was numerically singular.
    """
    N = offsets.shape[0] - 1
    d = w.shape[1]
    n_inner = z.shape[0]
    K = knots.shape[0] - order
    maxn = 0
    for i in range(N):
        maxn = max(maxn, offsets[i + 1] - offsets[i])
    f_new = np.empty(maxn)
    first_new = np.empty(maxn, dtype=np.int64)
    vals_new = np.empty((maxn, order))
    left = np.empty(order)
    right = np.empty(order)
    logw = np.empty(d)
    w_new = np.empty(d)
    b0c = Sinv[0, 0] * mu0[0] + Sinv[0, 1] * mu0[1]
    b1c = Sinv[1, 0] * mu0[0] + Sinv[1, 1] * mu0[1]
    for i in range(N):
        s = offsets[i]
        e = offsets[i + 1]
        for r in range(n_inner):
            if do_gibbs:
                if not _draw_a(i, s, e, ys, f, sigma2, Sinv, b0c, b1c, z[r, i, 0], z[r, i, 1], a, False):
                    if not _draw_a(i, s, e, ys, f, sigma2, Sinv, b0c, b1c, z[r, i, 0], z[r, i, 1], a, True):
                        return i
            if not do_mh:
                continue
            a_sh = a[i, 0]
            a_sc = a[i, 1]
            # clr coordinates plus a step projected onto the zero-sum hyperplane
            mlog = 0.0
            zbar = 0.0
            for k in range(d):
                logw[k] = np.log(w[i, k])
                mlog += logw[k]
                zbar += z[r, i, 2 + k]
            mlog /= d
            zbar /= d
            xmax = -np.inf
            for k in range(d):
                w_new[k] = logw[k] - mlog + sigma_q[i] * (z[r, i, 2 + k] - zbar)
                xmax = max(xmax, w_new[k])
            tot = 0.0
            for k in range(d):
                w_new[k] = np.exp(w_new[k] - xmax)
                tot += w_new[k]
            log_ratio = 0.0
            ok = True
            for k in range(d):
                w_new[k] /= tot
                if not w_new[k] > 0.0:
                    ok = False
                else:
                    # Dirichlet prior (conc - 1) plus the clr Jacobian (+1)
                    log_ratio += conc[k] * (np.log(w_new[k]) - logw[k])
            if not ok:
                continue
            drss = 0.0
            for j in range(s, e):
                h = 0.0
                for k in range(d):
                    h += tail[j, k] * w_new[k]
                h = min(max(h, 0.0), 1.0)
                jj = j - s
                fi = basis_at(knots, order, K, h, vals_new[jj], left, right)
                first_new[jj] = fi
                fv = 0.0
                for q in range(order):
                    fv += alpha[fi + q] * vals_new[jj, q]
                f_new[jj] = fv
                df = a_sc * (fv - f[j])
                drss += df * (df + 2.0 * (a_sc * f[j] - ys[j] + a_sh))
            log_ratio -= drss / (2.0 * sigma2)
            if np.isfinite(log_ratio) and np.log(u[r, i]) < log_ratio:
                for k in range(d):
                    w[i, k] = w_new[k]
                for j in range(s, e):
                    jj = j - s
                    f[j] = f_new[jj]
                    first[j] = first_new[jj]
                    for q in range(order):
                        vals[j, q] = vals_new[jj, q]
                accepted[i] += 1
    return -1


@nb.njit(cache=True)
def curve_stats(ys, offsets, a, first, vals, K, S_yy, S_By, S_BB):
    """Per-curve S_yy, S_By and S_BB using the local support of the shape basis."""
    N = offsets.shape[0] - 1
    order = vals.shape[1]
    for i in range(N):
        a_sh = a[i, 0]
        a_sc = a[i, 1]
        syy = 0.0
        for k in range(K):
            S_By[i, k] = 0.0
            for l in range(K):
                S_BB[i, k, l] = 0.0
        for j in range(offsets[i], offsets[i + 1]):
            yc = ys[j] - a_sh
            syy += yc * yc
            fi = first[j]
            for q in range(order):
                S_By[i, fi + q] += vals[j, q] * yc
                for q2 in range(order):
                    S_BB[i, fi + q, fi + q2] += vals[j, q] * vals[j, q2]
        S_yy[i] = syy
        for k in range(K):
            S_By[i, k] *= a_sc
            for l in range(K):
                S_BB[i, k, l] *= a_sc * a_sc
