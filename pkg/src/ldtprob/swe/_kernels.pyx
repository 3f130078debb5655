# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled DG shallow water kernels.

Loop-level port of ``_kernels_py``; see that module for the formulation.
Every function here has the same signature and semantics as its numpy twin.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()

cdef double _S3 = 0.57735026918962576451
cdef double GA = 0.5 * (1.0 + _S3)
cdef double GB = 0.5 * (1.0 - _S3)

STATUS_OK = 0
STATUS_POSITIVITY = 1
STATUS_CFL = 2


cdef class _Work:
    cdef double[::1] Fh, Fv, uhat, fL, fR
    cdef double[::1] v0b, v1b, h0b, h1b, fLb, fRb, uhatb

    def __init__(self, Py_ssize_t K):
        self.Fh = np.zeros(K + 1)
        self.Fv = np.zeros(K + 1)
        self.uhat = np.zeros(K + 1)
        self.fL = np.zeros(K)
        self.fR = np.zeros(K)
        self.v0b = np.zeros(K)
        self.v1b = np.zeros(K)
        self.h0b = np.zeros(K)
        self.h1b = np.zeros(K)
        self.fLb = np.zeros(K)
        self.fRb = np.zeros(K)
        self.uhatb = np.zeros(K + 1)


cdef inline double _sign(double x) nogil:
    if x > 0.0:
        return 1.0
    elif x < 0.0:
        return -1.0
    return 0.0


cdef double _lf(const double[:, ::1] h, const double[:, ::1] v, double g,
                Py_ssize_t* imax) noexcept nogil:
    cdef Py_ssize_t k, j, K = h.shape[0]
    cdef double s, C = -1.0
    for k in range(K):
        for j in range(2):
            s = fabs(v[k, j] / h[k, j]) + sqrt(g * h[k, j])
            if s > C:
                C = s
                imax[0] = 2 * k + j
    return C


cdef double _rhs(const double[:, ::1] h, const double[:, ::1] v,
                 const double[::1] B, double hbar, double eps, double g,
                 double[:, ::1] dh, double[:, ::1] dv, double[:, ::1] phi,
                 _Work wk) noexcept nogil:
    cdef Py_ssize_t k, K = h.shape[0]
    cdef Py_ssize_t imax = 0
    cdef double minv = 2.0 / hbar, c6 = hbar / 6.0
    cdef double hg1, hg2, vg1, vg2, Bg1, Bg2, eg1, eg2, eL, eR, pg1, pg2
    cdef double su, r0, r1, fg1, fg2, sv, sf, Bx, Rh0, Rh1, Rv0, Rv1, C
    cdef double[::1] Fh = wk.Fh, Fv = wk.Fv, uhat = wk.uhat, fL = wk.fL, fR = wk.fR

    uhat[0] = 0.0
    uhat[K] = 0.0
    for k in range(1, K):
        uhat[k] = 0.5 * (v[k - 1, 1] / h[k - 1, 1] + v[k, 0] / h[k, 0])
    for k in range(K):
        hg1 = GA * h[k, 0] + GB * h[k, 1]
        hg2 = GB * h[k, 0] + GA * h[k, 1]
        vg1 = GA * v[k, 0] + GB * v[k, 1]
        vg2 = GB * v[k, 0] + GA * v[k, 1]
        su = 0.5 * (vg1 / hg1 + vg2 / hg2)
        r0 = su - uhat[k]
        r1 = uhat[k + 1] - su
        phi[k, 0] = minv * (2.0 * r0 - r1)
        phi[k, 1] = minv * (2.0 * r1 - r0)
        eL = h[k, 0] + B[k]
        eR = h[k, 1] + B[k + 1]
        fL[k] = v[k, 0] * v[k, 0] / h[k, 0] + 0.5 * g * eL * (eL - 2.0 * B[k]) - eps * h[k, 0] * phi[k, 0]
        fR[k] = v[k, 1] * v[k, 1] / h[k, 1] + 0.5 * g * eR * (eR - 2.0 * B[k + 1]) - eps * h[k, 1] * phi[k, 1]

    C = _lf(h, v, g, &imax)
    Fh[0] = 0.0
    Fh[K] = 0.0
    for k in range(1, K):
        Fh[k] = 0.5 * (v[k - 1, 1] + v[k, 0]) + 0.5 * C * (h[k - 1, 1] - h[k, 0])
        Fv[k] = 0.5 * (fR[k - 1] + fL[k]) + 0.5 * C * (v[k - 1, 1] - v[k, 0])
    Fv[0] = fL[0] - C * v[0, 0]
    Fv[K] = fR[K - 1] + C * v[K - 1, 1]

    for k in range(K):
        hg1 = GA * h[k, 0] + GB * h[k, 1]
        hg2 = GB * h[k, 0] + GA * h[k, 1]
        vg1 = GA * v[k, 0] + GB * v[k, 1]
        vg2 = GB * v[k, 0] + GA * v[k, 1]
        pg1 = GA * phi[k, 0] + GB * phi[k, 1]
        pg2 = GB * phi[k, 0] + GA * phi[k, 1]
        Bg1 = GA * B[k] + GB * B[k + 1]
        Bg2 = GB * B[k] + GA * B[k + 1]
        eg1 = hg1 + Bg1
        eg2 = hg2 + Bg2
        fg1 = vg1 * vg1 / hg1 + 0.5 * g * eg1 * (eg1 - 2.0 * Bg1) - eps * hg1 * pg1
        fg2 = vg2 * vg2 / hg2 + 0.5 * g * eg2 * (eg2 - 2.0 * Bg2) - eps * hg2 * pg2
        sv = 0.5 * (vg1 + vg2)
        sf = 0.5 * (fg1 + fg2)
        Bx = (B[k + 1] - B[k]) / hbar
        eL = h[k, 0] + B[k]
        eR = h[k, 1] + B[k + 1]
        Rh0 = Fh[k] - sv
        Rh1 = sv - Fh[k + 1]
        Rv0 = Fv[k] - sf - g * Bx * c6 * (2.0 * eL + eR)
        Rv1 = sf - Fv[k + 1] - g * Bx * c6 * (eL + 2.0 * eR)
        dh[k, 0] = minv * (2.0 * Rh0 - Rh1)
        dh[k, 1] = minv * (2.0 * Rh1 - Rh0)
        dv[k, 0] = minv * (2.0 * Rv0 - Rv1)
        dv[k, 1] = minv * (2.0 * Rv1 - Rv0)
    return C


cdef void _rhs_vjp(const double[:, ::1] h, const double[:, ::1] v,
                   const double[::1] B, double hbar, double eps, double g,
                   const double[:, ::1] dhb, const double[:, ::1] dvb, double scale,
                   double[:, ::1] hb, double[:, ::1] vb, double[:, ::1] phib,
                   _Work wk) noexcept nogil:
    # dhb, dvb are multiplied by ``scale`` on the fly
    cdef Py_ssize_t k, j, K = h.shape[0]
    cdef Py_ssize_t imax = 0
    cdef double minv = 2.0 / hbar, c6 = hbar / 6.0
    cdef double C, Cb = 0.0
    cdef double hg1, hg2, vg1, vg2, ug1, ug2, su, r0, r1, p0, p1, pg1, pg2
    cdef double Rh0b, Rh1b, Rv0b, Rv1b, Bx, d, hk, vk, s, uu
    cdef double fgb, vgb, hg1b, hg2b, vg1b, vg2b, pg1b, pg2b, p0b, p1b, r0b, r1b, ugb
    cdef double[::1] Fh = wk.Fh, Fv = wk.Fv, uhat = wk.uhat
    cdef double[::1] v0b = wk.v0b, v1b = wk.v1b, h0b = wk.h0b, h1b = wk.h1b
    cdef double[::1] fLb = wk.fLb, fRb = wk.fRb, uhatb = wk.uhatb

    uhat[0] = 0.0
    uhat[K] = 0.0
    for k in range(1, K):
        uhat[k] = 0.5 * (v[k - 1, 1] / h[k - 1, 1] + v[k, 0] / h[k, 0])
    C = _lf(h, v, g, &imax)

    # Fh, Fv now hold the flux adjoints
    for k in range(K + 1):
        Fh[k] = 0.0
        Fv[k] = 0.0
        uhatb[k] = 0.0
    for k in range(K):
        Rh0b = scale * minv * (2.0 * dhb[k, 0] - dhb[k, 1])
        Rh1b = scale * minv * (2.0 * dhb[k, 1] - dhb[k, 0])
        Rv0b = scale * minv * (2.0 * dvb[k, 0] - dvb[k, 1])
        Rv1b = scale * minv * (2.0 * dvb[k, 1] - dvb[k, 0])
        Fh[k] += Rh0b
        Fh[k + 1] -= Rh1b
        Fv[k] += Rv0b
        Fv[k + 1] -= Rv1b
        Bx = (B[k + 1] - B[k]) / hbar
        h0b[k] = -g * Bx * c6 * (2.0 * Rv0b + Rv1b)
        h1b[k] = -g * Bx * c6 * (Rv0b + 2.0 * Rv1b)
        fLb[k] = 0.0
        fRb[k] = 0.0
        v0b[k] = 0.0
        v1b[k] = 0.0
        # stash svb and sfb in phib until the volume pass
        phib[k, 0] = Rh1b - Rh0b
        phib[k, 1] = Rv1b - Rv0b

    for k in range(1, K):
        d = Fv[k]
        fRb[k - 1] += 0.5 * d
        fLb[k] += 0.5 * d
        v1b[k - 1] += 0.5 * C * d
        v0b[k] -= 0.5 * C * d
        Cb += 0.5 * d * (v[k - 1, 1] - v[k, 0])
        d = Fh[k]
        v1b[k - 1] += 0.5 * d
        v0b[k] += 0.5 * d
        h1b[k - 1] += 0.5 * C * d
        h0b[k] -= 0.5 * C * d
        Cb += 0.5 * d * (h[k - 1, 1] - h[k, 0])
    fLb[0] += Fv[0]
    v0b[0] -= C * Fv[0]
    Cb -= Fv[0] * v[0, 0]
    fRb[K - 1] += Fv[K]
    v1b[K - 1] += C * Fv[K]
    Cb += Fv[K] * v[K - 1, 1]

    for k in range(K):
        hg1 = GA * h[k, 0] + GB * h[k, 1]
        hg2 = GB * h[k, 0] + GA * h[k, 1]
        vg1 = GA * v[k, 0] + GB * v[k, 1]
        vg2 = GB * v[k, 0] + GA * v[k, 1]
        ug1 = vg1 / hg1
        ug2 = vg2 / hg2
        su = 0.5 * (ug1 + ug2)
        r0 = su - uhat[k]
        r1 = uhat[k + 1] - su
        p0 = minv * (2.0 * r0 - r1)
        p1 = minv * (2.0 * r1 - r0)
        pg1 = GA * p0 + GB * p1
        pg2 = GB * p0 + GA * p1

        vgb = 0.5 * phib[k, 0]
        fgb = 0.5 * phib[k, 1]
        # Gauss point 1
        hg1b = fgb * (-ug1 * ug1 + g * hg1 - eps * pg1)
        vg1b = vgb + fgb * 2.0 * ug1
        pg1b = -fgb * eps * hg1
        # Gauss point 2
        hg2b = fgb * (-ug2 * ug2 + g * hg2 - eps * pg2)
        vg2b = vgb + fgb * 2.0 * ug2
        pg2b = -fgb * eps * hg2
        # traces
        uu = v[k, 0] / h[k, 0]
        h0b[k] += fLb[k] * (-uu * uu + g * h[k, 0] - eps * p0)
        v0b[k] += fLb[k] * 2.0 * uu
        p0b = -fLb[k] * eps * h[k, 0] + GA * pg1b + GB * pg2b
        uu = v[k, 1] / h[k, 1]
        h1b[k] += fRb[k] * (-uu * uu + g * h[k, 1] - eps * p1)
        v1b[k] += fRb[k] * 2.0 * uu
        p1b = -fRb[k] * eps * h[k, 1] + GB * pg1b + GA * pg2b
        phib[k, 0] = p0b
        phib[k, 1] = p1b

        r0b = minv * (2.0 * p0b - p1b)
        r1b = minv * (2.0 * p1b - p0b)
        uhatb[k] -= r0b
        uhatb[k + 1] += r1b
        ugb = 0.5 * (r0b - r1b)
        vg1b += ugb / hg1
        hg1b -= ugb * ug1 / hg1
        vg2b += ugb / hg2
        hg2b -= ugb * ug2 / hg2

        hb[k, 0] += GA * hg1b + GB * hg2b
        hb[k, 1] += GB * hg1b + GA * hg2b
        vb[k, 0] += GA * vg1b + GB * vg2b
        vb[k, 1] += GB * vg1b + GA * vg2b

    for k in range(1, K):
        d = 0.5 * uhatb[k]
        uu = v[k - 1, 1] / h[k - 1, 1]
        v1b[k - 1] += d / h[k - 1, 1]
        h1b[k - 1] -= d * uu / h[k - 1, 1]
        uu = v[k, 0] / h[k, 0]
        v0b[k] += d / h[k, 0]
        h0b[k] -= d * uu / h[k, 0]

    k = imax // 2
    j = imax % 2
    hk = h[k, j]
    vk = v[k, j]
    s = _sign(vk)
    if j == 0:
        v0b[k] += Cb * s / hk
        h0b[k] += Cb * (-s * vk / (hk * hk) + 0.5 * sqrt(g / hk))
    else:
        v1b[k] += Cb * s / hk
        h1b[k] += Cb * (-s * vk / (hk * hk) + 0.5 * sqrt(g / hk))

    for k in range(K):
        hb[k, 0] += h0b[k]
        hb[k, 1] += h1b[k]
        vb[k, 0] += v0b[k]
        vb[k, 1] += v1b[k]


def lf_constant(double[:, ::1] h, double[:, ::1] v, double g):
    cdef Py_ssize_t imax = 0
    cdef double C = _lf(h, v, g, &imax)
    return C, imax


def rhs(double[:, ::1] h, double[:, ::1] v, double[::1] B, double hbar,
        double eps, double g, double[:, ::1] dh, double[:, ::1] dv,
        double[:, ::1] phi):
    cdef _Work wk = _Work(h.shape[0])
    return _rhs(h, v, B, hbar, eps, g, dh, dv, phi, wk)


def rhs_vjp(double[:, ::1] h, double[:, ::1] v, double[::1] B, double hbar,
            double eps, double g, double[:, ::1] dhb, double[:, ::1] dvb,
            double[:, ::1] hb, double[:, ::1] vb, double[:, ::1] phib):
    cdef _Work wk = _Work(h.shape[0])
    _rhs_vjp(h, v, B, hbar, eps, g, dhb, dvb, 1.0, hb, vb, phib, wk)


def forward_run(double[:, ::1] h0, double[:, ::1] v0, double[::1] B,
                double hbar, double eps, double g, double dt, Py_ssize_t nsteps,
                double[:, ::1] obs_w, double obs_c,
                double[:, :, ::1] H, double[:, :, ::1] V, double[:, :, ::1] PHI,
                double[:, :, ::1] H1, double[:, :, ::1] V1, double[::1] fobs,
                double hmin, double cmax_limit, bint store):
    cdef Py_ssize_t K = h0.shape[0]
    cdef Py_ssize_t n, k, j
    cdef _Work wk = _Work(K)
    cdef double[:, ::1] h = np.array(h0, copy=True)
    cdef double[:, ::1] v = np.array(v0, copy=True)
    cdef double[:, ::1] hs = np.empty((K, 2))
    cdef double[:, ::1] vs = np.empty((K, 2))
    cdef double[:, ::1] dh = np.empty((K, 2))
    cdef double[:, ::1] dv = np.empty((K, 2))
    cdef double[:, ::1] phi = np.empty((K, 2))
    cdef double[:, ::1] phi1 = np.empty((K, 2))
    cdef double C, cmax = 0.0, acc, hmn
    cdef Py_ssize_t kmin
    with nogil:
        for n in range(nsteps + 1):
            acc = 0.0
            hmn = h[0, 0]
            kmin = 0
            for k in range(K):
                acc = acc + obs_w[k, 0] * h[k, 0] + obs_w[k, 1] * h[k, 1]
                for j in range(2):
                    if h[k, j] < hmn:
                        hmn = h[k, j]
                        kmin = k
            fobs[n] = acc + obs_c
            if hmn < hmin:
                with gil:
                    return STATUS_POSITIVITY, n, kmin, cmax
            C = _rhs(h, v, B, hbar, eps, g, dh, dv, phi, wk)
            if C > cmax:
                cmax = C
            if store:
                H[n, :, :] = h
                V[n, :, :] = v
                PHI[n, :, :] = phi
            if n == nsteps:
                break
            if C > cmax_limit:
                with gil:
                    return STATUS_CFL, n, -1, cmax
            hmn = h[0, 0] + dt * dh[0, 0]
            kmin = 0
            for k in range(K):
                for j in range(2):
                    hs[k, j] = h[k, j] + dt * dh[k, j]
                    vs[k, j] = v[k, j] + dt * dv[k, j]
                    if hs[k, j] < hmn:
                        hmn = hs[k, j]
                        kmin = k
            if hmn < hmin:
                with gil:
                    return STATUS_POSITIVITY, n, kmin, cmax
            C = _rhs(hs, vs, B, hbar, eps, g, dh, dv, phi1, wk)
            if C > cmax:
                cmax = C
            if C > cmax_limit:
                with gil:
                    return STATUS_CFL, n, -1, cmax
            if store:
                H1[n, :, :] = hs
                V1[n, :, :] = vs
            for k in range(K):
                for j in range(2):
                    h[k, j] = 0.5 * h[k, j] + 0.5 * (hs[k, j] + dt * dh[k, j])
                    v[k, j] = 0.5 * v[k, j] + 0.5 * (vs[k, j] + dt * dv[k, j])
    return STATUS_OK, nsteps, -1, cmax


def adjoint_run(double[:, :, ::1] H, double[:, :, ::1] V, double[:, :, ::1] H1,
                double[:, :, ::1] V1, double[::1] B, double hbar, double eps,
                double g, double dt, double[::1] seeds, double[:, ::1] obs_w,
                double[:, :, ::1] P, double[:, :, ::1] W, double[:, :, ::1] PSI,
                double[:, :, ::1] P1, double[:, :, ::1] W1):
    cdef Py_ssize_t nsteps = H1.shape[0]
    cdef Py_ssize_t K = H.shape[1]
    cdef Py_ssize_t n, k, j
    cdef _Work wk = _Work(K)
    cdef double[:, ::1] scratch = np.empty((K, 2))
    with nogil:
        for k in range(K):
            for j in range(2):
                P[nsteps, k, j] = seeds[nsteps] * obs_w[k, j]
                W[nsteps, k, j] = 0.0
                PSI[nsteps, k, j] = 0.0
        for n in range(nsteps - 1, -1, -1):
            for k in range(K):
                for j in range(2):
                    P1[n, k, j] = 0.5 * P[n + 1, k, j]
                    W1[n, k, j] = 0.5 * W[n + 1, k, j]
            _rhs_vjp(H1[n], V1[n], B, hbar, eps, g, P[n + 1], W[n + 1], 0.5 * dt,
                     P1[n], W1[n], scratch, wk)
            for k in range(K):
                for j in range(2):
                    P[n, k, j] = 0.5 * P[n + 1, k, j] + P1[n, k, j] + seeds[n] * obs_w[k, j]
                    W[n, k, j] = 0.5 * W[n + 1, k, j] + W1[n, k, j]
            _rhs_vjp(H[n], V[n], B, hbar, eps, g, P1[n], W1[n], dt,
                     P[n], W[n], PSI[n], wk)
