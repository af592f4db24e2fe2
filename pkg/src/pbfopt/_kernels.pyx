# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled thermal kernels.

Same contract as the pure-NumPy fallback ``pbfopt._kernels_py``: adaptive
Gauss-Kronrod 15(7) integration of the per-segment moving-Gaussian-source
kernel in the substituted variable s = sqrt(tau), accumulated over segments
for a batch of (point, time) pairs.  All inner loops run without the GIL.
"""

from libc.math cimport exp, fabs, sqrt

import numpy as np


cdef double[15] NODES
cdef double[15] WK
cdef double[15] WG

NODES[0] = -0.991455371120813; NODES[1] = -0.949107912342759
NODES[2] = -0.864864423359769; NODES[3] = -0.741531185599394
NODES[4] = -0.586087235467691; NODES[5] = -0.405845151377397
NODES[6] = -0.207784955007898; NODES[7] = 0.0
NODES[8] = 0.207784955007898; NODES[9] = 0.405845151377397
NODES[10] = 0.586087235467691; NODES[11] = 0.741531185599394
NODES[12] = 0.864864423359769; NODES[13] = 0.949107912342759
NODES[14] = 0.991455371120813

WK[0] = 0.022935322010529; WK[1] = 0.063092092629979
WK[2] = 0.104790010322250; WK[3] = 0.140653259715525
WK[4] = 0.169004726639267; WK[5] = 0.190350578064785
WK[6] = 0.204432940075298; WK[7] = 0.209482141084728
WK[8] = 0.204432940075298; WK[9] = 0.190350578064785
WK[10] = 0.169004726639267; WK[11] = 0.140653259715525
WK[12] = 0.104790010322250; WK[13] = 0.063092092629979
WK[14] = 0.022935322010529

WG[0] = 0.0; WG[1] = 0.129484966168870
WG[2] = 0.0; WG[3] = 0.279705391489277
WG[4] = 0.0; WG[5] = 0.381830050505119
WG[6] = 0.0; WG[7] = 0.417959183673469
WG[8] = 0.0; WG[9] = 0.381830050505119
WG[10] = 0.0; WG[11] = 0.279705391489277
WG[12] = 0.0; WG[13] = 0.129484966168870
WG[14] = 0.0

cdef enum:
    MAX_PANELS = 64


cdef struct SegGeom:
    double x0, y0, cth, sth, v, ti, dur, sig2


cdef inline void _panel(double a, double b, double px, double py, double z2_4k,
                        double t, SegGeom* sg, double kappa, double c0,
                        double* k15, double* g7) nogil:
    cdef double xm = 0.5 * (a + b)
    cdef double xr = 0.5 * (b - a)
    cdef double sk = 0.0, sg7 = 0.0
    cdef double s, tau, sig2_t, te, xb, yb, dx, dy, g
    cdef int j
    for j in range(15):
        s = xm + xr * NODES[j]
        tau = s * s
        sig2_t = sg.sig2 + 2.0 * kappa * tau
        te = t - tau - sg.ti
        if te < 0.0:
            te = 0.0
        elif te > sg.dur:
            te = sg.dur
        xb = sg.x0 + sg.v * te * sg.cth
        yb = sg.y0 + sg.v * te * sg.sth
        dx = px - xb
        dy = py - yb
        g = exp(-(dx * dx + dy * dy) / (2.0 * sig2_t) - z2_4k / tau) / sig2_t
        sk += WK[j] * g
        sg7 += WG[j] * g
    k15[0] = xr * c0 * sk
    g7[0] = xr * c0 * sg7


cdef inline double _pair_segment(double px, double py, double z2_4k, double t,
                                 SegGeom* sg, double kappa, double c0,
                                 double rtol, double atol_raw,
                                 double* err_out, int* fail) nogil:
    """Adaptive integral over [sqrt(tau_lo), sqrt(tau_hi)] for one pair."""
    cdef double tau_hi = t - sg.ti
    cdef double tau_lo = t - sg.ti - sg.dur
    if tau_lo < 0.0:
        tau_lo = 0.0
    cdef double s_lo = sqrt(tau_lo)
    cdef double s_hi = sqrt(tau_hi)

    # split the initial interval at the closest-approach lag so a narrow
    # near-beam pulse cannot hide between coarse nodes
    cdef double proj = ((px - sg.x0) * sg.cth + (py - sg.y0) * sg.sth) / sg.v
    if proj < 0.0:
        proj = 0.0
    elif proj > sg.dur:
        proj = sg.dur
    cdef double tau_star = t - sg.ti - proj
    if tau_star < tau_lo:
        tau_star = tau_lo
    elif tau_star > tau_hi:
        tau_star = tau_hi
    cdef double s_star = sqrt(tau_star)

    cdef double[MAX_PANELS] pa
    cdef double[MAX_PANELS] pb
    cdef double[MAX_PANELS] pv
    cdef double[MAX_PANELS] pe
    cdef int n = 0
    cdef double width = s_hi - s_lo

    pa[0] = s_lo
    if s_star > s_lo + 1e-3 * width and s_star < s_hi - 1e-3 * width:
        pb[0] = s_star
        pa[1] = s_star
        pb[1] = s_hi
        n = 2
    else:
        pb[0] = s_hi
        n = 1

    cdef int j
    for j in range(n):
        _panel(pa[j], pb[j], px, py, z2_4k, t, sg, kappa, c0, &pv[j], &pe[j])
        pe[j] = fabs(pv[j] - pe[j])

    cdef double total, err, tol, mid, worst
    cdef int jw
    while True:
        total = 0.0
        err = 0.0
        for j in range(n):
            total += pv[j]
            err += pe[j]
        tol = rtol * fabs(total)
        if tol < atol_raw:
            tol = atol_raw
        if err <= tol:
            err_out[0] = err
            return total
        if n >= MAX_PANELS:
            fail[0] += 1
            err_out[0] = err
            return total
        worst = -1.0
        jw = 0
        for j in range(n):
            if pe[j] > worst:
                worst = pe[j]
                jw = j
        mid = 0.5 * (pa[jw] + pb[jw])
        pa[n] = mid
        pb[n] = pb[jw]
        pb[jw] = mid
        _panel(pa[jw], pb[jw], px, py, z2_4k, t, sg, kappa, c0, &pv[jw], &pe[jw])
        pe[jw] = fabs(pv[jw] - pe[jw])
        _panel(pa[n], pb[n], px, py, z2_4k, t, sg, kappa, c0, &pv[n], &pe[n])
        pe[n] = fabs(pv[n] - pe[n])
        n += 1


cdef inline double _seg_dist2(double px, double py, SegGeom* sg) nogil:
    cdef double rx = px - sg.x0
    cdef double ry = py - sg.y0
    cdef double along = rx * sg.cth + ry * sg.sth
    cdef double length = sg.v * sg.dur
    if along < 0.0:
        along = 0.0
    elif along > length:
        along = length
    cdef double ox = rx - along * sg.cth
    cdef double oy = ry - along * sg.sth
    return ox * ox + oy * oy


def delta_t_pairs(const double[::1] px, const double[::1] py, const double[::1] pz,
                  const double[::1] t,
                  Py_ssize_t k_lo, Py_ssize_t k_hi,
                  const double[::1] x0, const double[::1] y0,
                  const double[::1] cth, const double[::1] sth,
                  const double[::1] ti, const double[::1] tf,
                  const double[::1] sigma, const double[::1] speed,
                  double kappa, double coef, double rtol, double atol, double cull,
                  double[::1] out):
    """Accumulate segment contributions for (point, time) pairs into ``out``.

    Returns (worst achieved error in K over pairs whose tolerance was not
    met, number of such pairs).
    """
    if coef == 0.0:
        return 0.0, 0
    cdef double atol_raw = atol / coef
    cdef double c_depth = 1.0 / sqrt(np.pi * kappa)
    cdef double c0 = c_depth / np.pi
    cdef double cull_raw = cull / coef
    cdef Py_ssize_t n_pairs = px.shape[0]
    cdef Py_ssize_t i, k
    cdef SegGeom sg
    cdef double z2_4k, tau_lo, tau_hi, d2, amp, val, err
    cdef double worst = 0.0
    cdef int n_fail = 0
    cdef double tg

    with nogil:
        for i in range(n_pairs):
            tg = t[i]
            z2_4k = pz[i] * pz[i] / (4.0 * kappa)
            for k in range(k_lo, k_hi):
                if tg <= ti[k]:
                    continue
                sg.x0 = x0[k]
                sg.y0 = y0[k]
                sg.cth = cth[k]
                sg.sth = sth[k]
                sg.v = speed[k]
                sg.ti = ti[k]
                sg.dur = tf[k] - ti[k]
                sg.sig2 = sigma[k] * sigma[k]
                tau_hi = tg - ti[k]
                tau_lo = tg - tf[k]
                if tau_lo < 0.0:
                    tau_lo = 0.0
                d2 = _seg_dist2(px[i], py[i], &sg)
                amp = (
                    c0 / (sg.sig2 + 2.0 * kappa * tau_lo)
                    * exp(-d2 / (2.0 * (sg.sig2 + 2.0 * kappa * tau_hi))
                          - z2_4k / tau_hi)
                    * (sqrt(tau_hi) - sqrt(tau_lo))
                )
                if amp < cull_raw:
                    continue
                err = 0.0
                val = _pair_segment(px[i], py[i], z2_4k, tg, &sg, kappa, c0,
                                    rtol, atol_raw, &err, &n_fail)
                out[i] += coef * val
                if err > rtol * fabs(val) and coef * err > atol and coef * err > worst:
                    worst = coef * err
    return worst, n_fail
