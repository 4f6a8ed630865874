"""Compiled kernels for the chain-structured generalized lasso.

The problem solved here is

    min_theta  1/2 ||y - theta||^2 + sum_t g_t |theta_t| + sum_t w_t |theta_{t+1} - theta_t|

with ``g = lam * lasso_weights`` and ``w = lam * fused_weights`` already
multiplied through, and some coordinates pinned to zero.  The solver is a
forward pass over derivatives of the partial minimisers (piecewise linear,
nondecreasing, with jumps) followed by a backward clipping pass, so the
result is exact up to rounding: fused coordinates are bitwise equal and
zeroed coordinates are exactly 0.0.
"""

import numpy as np

try:  # pragma: no cover - exercised implicitly
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


@njit(cache=True)
def _crossing(m, bp, a, c, v):
    # smallest theta with f(theta+) >= v; every piece has slope >= 1 here
    for j in range(m + 1):
        if j == m or a[j] * bp[j] + c[j] >= v:
            if j > 0 and a[j] * bp[j - 1] + c[j] >= v:
                return bp[j - 1]
            x = (v - c[j]) / a[j]
            # snap rounding-level misses onto the breakpoint (keeps exact zeros)
            eps = 8e-16 * (abs(v) + abs(c[j]) + abs(x))
            if j > 0 and x < bp[j - 1] + eps:
                x = bp[j - 1]
            if j < m and x > bp[j] - eps:
                x = bp[j]
            return x
    return 0.0  # unreachable


@njit(cache=True)
def dp_solve(y, g, w, pinned):
    """Exact minimiser of the chain problem described in the module docstring.

    ``w[t]`` couples coordinates t and t+1; entries of ``g`` and ``w`` that
    touch a pinned coordinate only matter where the other end is free.
    """
    n = y.shape[0]
    cap = 3 * n + 8
    bp = np.empty(cap)
    a = np.empty(cap + 1)
    c = np.empty(cap + 1)
    nbp = np.empty(cap)
    na = np.empty(cap + 1)
    nc = np.empty(cap + 1)
    lo = np.zeros(n)
    hi = np.zeros(n)
    theta = np.zeros(n)

    m = 0
    a[0] = 0.0
    c[0] = 0.0
    last = 0.0
    for t in range(n):
        if pinned[t]:
            lo[t] = 0.0
            hi[t] = 0.0
            if t < n - 1:
                m = 1
                bp[0] = 0.0
                a[0] = 0.0
                a[1] = 0.0
                c[0] = -w[t]
                c[1] = w[t]
            continue
        # data term
        for j in range(m + 1):
            a[j] += 1.0
            c[j] -= y[t]
        # weighted |theta| kink at zero
        gt = g[t]
        if gt > 0.0:
            k = 0
            while k < m and bp[k] < 0.0:
                k += 1
            if k < m and bp[k] == 0.0:
                for j in range(k + 1):
                    c[j] -= gt
                for j in range(k + 1, m + 1):
                    c[j] += gt
            else:
                for j in range(m - 1, k - 1, -1):
                    bp[j + 1] = bp[j]
                for j in range(m + 1, k, -1):
                    a[j] = a[j - 1]
                    c[j] = c[j - 1]
                bp[k] = 0.0
                m += 1
                for j in range(k + 1):
                    c[j] -= gt
                for j in range(k + 1, m + 1):
                    c[j] += gt
        if t == n - 1:
            last = _crossing(m, bp, a, c, 0.0)
            break
        wt = w[t]
        xl = _crossing(m, bp, a, c, -wt)
        xh = _crossing(m, bp, a, c, wt)
        if xh < xl:
            xh = xl
        lo[t] = xl
        hi[t] = xh
        # clip the derivative to [-wt, wt]
        nm = 0
        na[0] = 0.0
        nc[0] = -wt
        nbp[0] = xl
        nm = 1
        if xh > xl:
            jl = 0
            while jl < m and bp[jl] <= xl:
                jl += 1
            na[nm] = a[jl]
            nc[nm] = c[jl]
            k = jl
            while k < m and bp[k] < xh:
                nbp[nm] = bp[k]
                na[nm + 1] = a[k + 1]
                nc[nm + 1] = c[k + 1]
                nm += 1
                k += 1
            nbp[nm] = xh
            nm += 1
        na[nm] = 0.0
        nc[nm] = wt
        m = nm
        for j in range(m):
            bp[j] = nbp[j]
        for j in range(m + 1):
            a[j] = na[j]
            c[j] = nc[j]

    theta[n - 1] = 0.0 if pinned[n - 1] else last
    for t in range(n - 2, -1, -1):
        v = theta[t + 1]
        if v < lo[t]:
            v = lo[t]
        if v > hi[t]:
            v = hi[t]
        theta[t] = v
    return theta


@njit(cache=True)
def certify(y, theta, g, w, pinned, free_edge, node_zero, edge_zero):
    """Build a dual certificate for ``theta`` and return (residual, z, s).

    ``z[t]`` is the scaled fused multiplier on edge t (|z[t]| <= w[t]) and
    ``s[t]`` the scaled lasso multiplier (|s[t]| <= g[t]).  The residual is
    the largest stationarity violation that could not be absorbed by the
    subgradient boxes; it is 0 for an exact minimiser.
    """
    n = y.shape[0]
    zl = np.zeros(n)
    zh = np.zeros(n)
    sl = np.zeros(n)
    sh = np.zeros(n)
    viol = 0.0
    pl = 0.0
    ph = 0.0
    inf = np.inf
    for t in range(n):
        r = theta[t] - y[t]
        if pinned[t]:
            sl[t] = -inf
            sh[t] = inf
        elif node_zero[t]:
            sl[t] = -g[t]
            sh[t] = g[t]
        else:
            s0 = g[t] if theta[t] > 0.0 else -g[t]
            sl[t] = s0
            sh[t] = s0
        lo_ = pl + r + sl[t]
        hi_ = ph + r + sh[t]
        if t == n - 1:
            if lo_ > 0.0:
                viol = max(viol, lo_)
            elif hi_ < 0.0:
                viol = max(viol, -hi_)
            zl[t] = 0.0
            zh[t] = 0.0
            break
        if not free_edge[t]:
            el = -inf
            eh = inf
        elif edge_zero[t]:
            el = -w[t]
            eh = w[t]
        else:
            e0 = w[t] if theta[t + 1] > theta[t] else -w[t]
            el = e0
            eh = e0
        nl = max(lo_, el)
        nh = min(hi_, eh)
        if nl > nh:
            if hi_ < el:
                viol = max(viol, el - hi_)
                nl = el
                nh = el
            else:
                viol = max(viol, lo_ - eh)
                nl = eh
                nh = eh
        zl[t] = nl
        zh[t] = nh
        pl = nl
        ph = nh

    z = np.zeros(n)
    s = np.zeros(n)
    zt = 0.0
    for t in range(n - 1, -1, -1):
        r = theta[t] - y[t]
        if t > 0:
            prev_lo = zl[t - 1]
            prev_hi = zh[t - 1]
        else:
            prev_lo = 0.0
            prev_hi = 0.0
        # z_prev must lie in [zt - r - sh, zt - r - sl] and in [prev_lo, prev_hi]
        cl = max(zt - r - sh[t], prev_lo)
        ch = min(zt - r - sl[t], prev_hi)
        target = zt - r
        if not pinned[t] and not node_zero[t]:
            target = zt - r - sl[t]
        if cl <= ch:
            zp = min(max(target, cl), ch)
        else:
            zp = min(max(target, prev_lo), prev_hi)
        st = zt - r - zp
        if st < sl[t]:
            st = sl[t]
        if st > sh[t]:
            st = sh[t]
        s[t] = 0.0 if pinned[t] else st
        if t > 0:
            z[t - 1] = zp
        zt = zp
    return viol, z, s
