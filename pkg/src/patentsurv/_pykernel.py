"""Pure NumPy risk-set accumulation for the Cox partial likelihood.

Fallback for :mod:`patentsurv._ckernel`; both expose the same ``accumulate``.
Records must arrive sorted by time, descending, with ``bounds`` marking the
tied-time blocks. The risk-set sums are kept relative to the running maximum
of the linear predictor so ``exp`` never overflows.
"""

import numpy as np


def accumulate(x, eta, event, bounds, efron, detail):
    n, p = x.shape
    ngroups = len(bounds) - 1
    loglik = 0.0
    score = np.zeros(p)
    info = np.zeros((p, p))
    if detail:
        u_by_time = np.zeros((ngroups, p))
        i_by_time = np.zeros((ngroups, p, p))
    else:
        u_by_time = i_by_time = None

    shift = -np.inf
    s0 = 0.0
    s1 = np.zeros(p)
    s2 = np.zeros((p, p))

    for g in range(ngroups):
        lo, hi = bounds[g], bounds[g + 1]
        xg = x[lo:hi]
        eg = eta[lo:hi]
        top = eg.max()
        if top > shift:
            if s0 > 0.0:
                scale = np.exp(shift - top)
                s0 *= scale
                s1 *= scale
                s2 *= scale
            shift = top
        w = np.exp(eg - shift)
        wx = xg * w[:, None]
        s0 += w.sum()
        s1 += wx.sum(axis=0)
        s2 += xg.T @ wx

        dead = event[lo:hi] != 0
        nd = int(dead.sum())
        if nd == 0:
            continue
        xd = xg[dead]
        wd = w[dead]
        wxd = wx[dead]
        xsum = xd.sum(axis=0)
        loglik += eg[dead].sum()
        if efron and nd > 1:
            d0 = wd.sum()
            d1 = wxd.sum(axis=0)
            d2 = xd.T @ wxd
            frac = np.arange(nd) / nd
            denom = s0 - frac * d0
            a = (s1[None, :] - frac[:, None] * d1[None, :]) / denom[:, None]
            inv = 1.0 / denom
            loglik -= np.log(denom).sum() + nd * shift
            ug = xsum - a.sum(axis=0)
            ig = inv.sum() * s2 - (frac * inv).sum() * d2 - a.T @ a
        else:
            a = s1 / s0
            loglik -= nd * (np.log(s0) + shift)
            ug = xsum - nd * a
            ig = nd * (s2 / s0 - np.outer(a, a))
        score += ug
        info += ig
        if detail:
            u_by_time[g] = ug
            i_by_time[g] = ig

    return loglik, score, 0.5 * (info + info.T), u_by_time, i_by_time
