"""Pure numpy implementation of the DG shallow water kernels.

This module mirrors ``_kernels.pyx`` function for function and is used when
the compiled extension is unavailable.  Both backends share the array layout:

* ``h``, ``v``, ``phi`` have shape ``(K, 2)`` (left/right nodal values per
  element, linear Lagrange basis).
* ``B`` has shape ``(K + 1,)`` (continuous piecewise-linear bathymetry).
* Trajectory arrays have a leading time axis.

The momentum flux and bathymetry source are written in terms of the free
surface ``eta = h + B``::

    1/2 g h^2  ->  1/2 g (eta^2 - 2 eta B),   g h B_x  ->  g eta B_x.

The two forms are algebraically identical for continuous piecewise-linear B
(the difference integrates to zero element by element with two-point Gauss
quadrature) but the lake at rest now evaluates to exactly zero in floating
point rather than to a difference of O(g h^2) terms.
"""

from __future__ import annotations

import numpy as np

_S3 = 1.0 / np.sqrt(3.0)
GA = 0.5 * (1.0 + _S3)  # weight of the near node at a Gauss point
GB = 0.5 * (1.0 - _S3)

STATUS_OK = 0
STATUS_POSITIVITY = 1
STATUS_CFL = 2


def _gauss(q):
    return GA * q[:, 0] + GB * q[:, 1], GB * q[:, 0] + GA * q[:, 1]


def lf_constant(h, v, g):
    """Return (C, flat argmax) for the global Lax-Friedrichs constant."""
    speed = np.abs(v / h) + np.sqrt(g * h)
    idx = int(np.argmax(speed))
    return float(speed.flat[idx]), idx


def rhs(h, v, B, hbar, eps, g, dh, dv, phi):
    """Semi-discrete right-hand side.  Writes ``dh``, ``dv``, ``phi``; returns C."""
    K = h.shape[0]
    h0, h1 = h[:, 0], h[:, 1]
    v0, v1 = v[:, 0], v[:, 1]
    BL, BR = B[:-1], B[1:]
    Bx = (BR - BL) / hbar
    hg1, hg2 = _gauss(h)
    vg1, vg2 = _gauss(v)
    Bg1 = GA * BL + GB * BR
    Bg2 = GB * BL + GA * BR
    minv = 2.0 / hbar

    # auxiliary phi = u_x with central flux and u_hat = 0 at the walls
    su = 0.5 * (vg1 / hg1 + vg2 / hg2)
    uhat = np.zeros(K + 1)
    uhat[1:-1] = 0.5 * (v1[:-1] / h1[:-1] + v0[1:] / h0[1:])
    r0 = su - uhat[:-1]
    r1 = uhat[1:] - su
    phi[:, 0] = minv * (2.0 * r0 - r1)
    phi[:, 1] = minv * (2.0 * r1 - r0)
    pg1, pg2 = _gauss(phi)

    eg1, eg2 = hg1 + Bg1, hg2 + Bg2
    fg1 = vg1 * vg1 / hg1 + 0.5 * g * eg1 * (eg1 - 2.0 * Bg1) - eps * hg1 * pg1
    fg2 = vg2 * vg2 / hg2 + 0.5 * g * eg2 * (eg2 - 2.0 * Bg2) - eps * hg2 * pg2
    eL, eR = h0 + BL, h1 + BR
    fL = v0 * v0 / h0 + 0.5 * g * eL * (eL - 2.0 * BL) - eps * h0 * phi[:, 0]
    fR = v1 * v1 / h1 + 0.5 * g * eR * (eR - 2.0 * BR) - eps * h1 * phi[:, 1]

    C, _ = lf_constant(h, v, g)
    Fh = np.zeros(K + 1)
    Fh[1:-1] = 0.5 * (v1[:-1] + v0[1:]) + 0.5 * C * (h1[:-1] - h0[1:])
    Fv = np.empty(K + 1)
    Fv[1:-1] = 0.5 * (fR[:-1] + fL[1:]) + 0.5 * C * (v1[:-1] - v0[1:])
    Fv[0] = fL[0] - C * v0[0]
    Fv[K] = fR[-1] + C * v1[-1]

    sv = 0.5 * (vg1 + vg2)
    sf = 0.5 * (fg1 + fg2)
    c6 = hbar / 6.0
    Rh0 = Fh[:-1] - sv
    Rh1 = sv - Fh[1:]
    Rv0 = Fv[:-1] - sf - g * Bx * c6 * (2.0 * eL + eR)
    Rv1 = sf - Fv[1:] - g * Bx * c6 * (eL + 2.0 * eR)
    dh[:, 0] = minv * (2.0 * Rh0 - Rh1)
    dh[:, 1] = minv * (2.0 * Rh1 - Rh0)
    dv[:, 0] = minv * (2.0 * Rv0 - Rv1)
    dv[:, 1] = minv * (2.0 * Rv1 - Rv0)
    return C


def rhs_vjp(h, v, B, hbar, eps, g, dhb, dvb, hb, vb, phib):
    """Vector-Jacobian product of :func:`rhs` with respect to (h, v).

    Adds the products into ``hb`` and ``vb`` and writes the adjoint of the
    auxiliary variable into ``phib``.  The bathymetry enters only through the
    source, whose transpose is handled by the caller (it reduces to
    ``-g * dvb * h`` nodally).
    """
    K = h.shape[0]
    h0, h1 = h[:, 0], h[:, 1]
    v0, v1 = v[:, 0], v[:, 1]
    hg1, hg2 = _gauss(h)
    vg1, vg2 = _gauss(v)
    minv = 2.0 / hbar

    # forward recomputation of the quantities the transpose needs
    ug1, ug2 = vg1 / hg1, vg2 / hg2
    uL, uR = v0 / h0, v1 / h1
    su = 0.5 * (ug1 + ug2)
    uhat = np.zeros(K + 1)
    uhat[1:-1] = 0.5 * (uR[:-1] + uL[1:])
    r0 = su - uhat[:-1]
    r1 = uhat[1:] - su
    p0 = minv * (2.0 * r0 - r1)
    p1 = minv * (2.0 * r1 - r0)
    pg1 = GA * p0 + GB * p1
    pg2 = GB * p0 + GA * p1
    speed = np.abs(v / h) + np.sqrt(g * h)
    idx = int(np.argmax(speed))
    C = float(speed.flat[idx])

    # dq = Minv R  ->  Rbar = Minv dqbar (Minv symmetric)
    Rh0b = minv * (2.0 * dhb[:, 0] - dhb[:, 1])
    Rh1b = minv * (2.0 * dhb[:, 1] - dhb[:, 0])
    Rv0b = minv * (2.0 * dvb[:, 0] - dvb[:, 1])
    Rv1b = minv * (2.0 * dvb[:, 1] - dvb[:, 0])

    svb = Rh1b - Rh0b
    sfb = Rv1b - Rv0b
    Fhb = np.zeros(K + 1)
    Fhb[:-1] += Rh0b
    Fhb[1:] -= Rh1b
    Fvb = np.zeros(K + 1)
    Fvb[:-1] += Rv0b
    Fvb[1:] -= Rv1b
    # source term: d/dh of -g Bx (M eta) is -g Bx M
    Bx = (B[1:] - B[:-1]) / hbar
    c6 = hbar / 6.0
    h0b = -g * Bx * c6 * (2.0 * Rv0b + Rv1b)
    h1b = -g * Bx * c6 * (Rv0b + 2.0 * Rv1b)

    # interface fluxes
    fLb = np.zeros(K)
    fRb = np.zeros(K)
    v0b = np.zeros(K)
    v1b = np.zeros(K)
    Cb = 0.0
    Fvi = Fvb[1:-1]
    fRb[:-1] += 0.5 * Fvi
    fLb[1:] += 0.5 * Fvi
    v1b[:-1] += 0.5 * C * Fvi
    v0b[1:] -= 0.5 * C * Fvi
    Cb += 0.5 * np.dot(Fvi, v1[:-1] - v0[1:])
    fLb[0] += Fvb[0]
    v0b[0] -= C * Fvb[0]
    Cb -= Fvb[0] * v0[0]
    fRb[-1] += Fvb[K]
    v1b[-1] += C * Fvb[K]
    Cb += Fvb[K] * v1[-1]
    Fhi = Fhb[1:-1]
    v1b[:-1] += 0.5 * Fhi
    v0b[1:] += 0.5 * Fhi
    h1b[:-1] += 0.5 * C * Fhi
    h0b[1:] -= 0.5 * C * Fhi
    Cb += 0.5 * np.dot(Fhi, h1[:-1] - h0[1:])

    # volume terms
    fg1b = 0.5 * sfb
    fg2b = 0.5 * sfb
    vg1b = 0.5 * svb
    vg2b = 0.5 * svb

    # momentum flux partials: f = v^2/h + 1/2 g h^2 (+ B terms) - eps h phi
    def fpartials(hh, vv, pp):
        uu = vv / hh
        return -uu * uu + g * hh - eps * pp, 2.0 * uu, -eps * hh

    dfh, dfv, dfp = fpartials(hg1, vg1, pg1)
    hg1b = fg1b * dfh
    vg1b = vg1b + fg1b * dfv
    pg1b = fg1b * dfp
    dfh, dfv, dfp = fpartials(hg2, vg2, pg2)
    hg2b = fg2b * dfh
    vg2b = vg2b + fg2b * dfv
    pg2b = fg2b * dfp
    dfh, dfv, dfp = fpartials(h0, v0, p0)
    h0b += fLb * dfh
    v0b += fLb * dfv
    p0b = fLb * dfp
    dfh, dfv, dfp = fpartials(h1, v1, p1)
    h1b += fRb * dfh
    v1b += fRb * dfv
    p1b = fRb * dfp
    p0b = p0b + GA * pg1b + GB * pg2b
    p1b = p1b + GB * pg1b + GA * pg2b
    phib[:, 0] = p0b
    phib[:, 1] = p1b

    # phi = Minv r
    r0b = minv * (2.0 * p0b - p1b)
    r1b = minv * (2.0 * p1b - p0b)
    sub = r0b - r1b
    uhatb = np.zeros(K + 1)
    uhatb[:-1] -= r0b
    uhatb[1:] += r1b
    ui = uhatb[1:-1]
    uRb = np.zeros(K)
    uLb = np.zeros(K)
    uRb[:-1] += 0.5 * ui
    uLb[1:] += 0.5 * ui
    ug1b = 0.5 * sub
    ug2b = 0.5 * sub
    vg1b += ug1b / hg1
    hg1b -= ug1b * ug1 / hg1
    vg2b += ug2b / hg2
    hg2b -= ug2b * ug2 / hg2
    v0b += uLb / h0
    h0b -= uLb * uL / h0
    v1b += uRb / h1
    h1b -= uRb * uR / h1

    # global LF constant: derivative through the maximizing node
    k, j = divmod(idx, 2)
    hk, vk = h[k, j], v[k, j]
    s = np.sign(vk)
    if j == 0:
        v0b[k] += Cb * s / hk
        h0b[k] += Cb * (-s * vk / (hk * hk) + 0.5 * np.sqrt(g / hk))
    else:
        v1b[k] += Cb * s / hk
        h1b[k] += Cb * (-s * vk / (hk * hk) + 0.5 * np.sqrt(g / hk))

    # gather Gauss-point adjoints
    hb[:, 0] += h0b + GA * hg1b + GB * hg2b
    hb[:, 1] += h1b + GB * hg1b + GA * hg2b
    vb[:, 0] += v0b + GA * vg1b + GB * vg2b
    vb[:, 1] += v1b + GB * vg1b + GA * vg2b


def forward_run(h0, v0, B, hbar, eps, g, dt, nsteps, obs_w, obs_c,
                H, V, PHI, H1, V1, fobs, hmin, cmax_limit, store):
    """Integrate ``nsteps`` SSP-RK2 steps from (h0, v0).

    When ``store`` is true the level states go to ``H``, ``V``, ``PHI`` (shape
    ``(nsteps + 1, K, 2)``) and the first-stage states to ``H1``, ``V1``
    (shape ``(nsteps, K, 2)``).  ``fobs`` (length ``nsteps + 1``) receives the
    observable at every level.

    Returns ``(status, step, element, cmax)``.
    """
    K = h0.shape[0]
    h = h0.copy()
    v = v0.copy()
    dh = np.empty((K, 2))
    dv = np.empty((K, 2))
    phi = np.empty((K, 2))
    dh1 = np.empty((K, 2))
    dv1 = np.empty((K, 2))
    phi1 = np.empty((K, 2))
    cmax = 0.0
    for n in range(nsteps + 1):
        fobs[n] = np.sum(obs_w * h) + obs_c
        hm = int(np.argmin(h))
        if h.flat[hm] < hmin:
            return STATUS_POSITIVITY, n, hm // 2, cmax
        C = rhs(h, v, B, hbar, eps, g, dh, dv, phi)
        cmax = max(cmax, C)
        if store:
            H[n] = h
            V[n] = v
            PHI[n] = phi
        if n == nsteps:
            break
        if C > cmax_limit:
            return STATUS_CFL, n, -1, cmax
        hs = h + dt * dh
        vs = v + dt * dv
        hm = int(np.argmin(hs))
        if hs.flat[hm] < hmin:
            return STATUS_POSITIVITY, n, hm // 2, cmax
        C = rhs(hs, vs, B, hbar, eps, g, dh1, dv1, phi1)
        cmax = max(cmax, C)
        if C > cmax_limit:
            return STATUS_CFL, n, -1, cmax
        if store:
            H1[n] = hs
            V1[n] = vs
        h = 0.5 * h + 0.5 * (hs + dt * dh1)
        v = 0.5 * v + 0.5 * (vs + dt * dv1)
    return STATUS_OK, nsteps, -1, cmax


def adjoint_run(H, V, H1, V1, B, hbar, eps, g, dt, seeds, obs_w,
                P, W, PSI, P1, W1):
    """Reverse sweep through the stored SSP-RK2 trajectory.

    ``seeds[m]`` scales the observation weights ``obs_w`` injected into the
    h-adjoint at level ``m``.  On return ``P``, ``W`` hold the total adjoints
    of (h, v) at every level, ``PSI`` the adjoint of the auxiliary variable
    from the first stage of each step, and ``P1``, ``W1`` the stage adjoints.
    """
    nsteps = H1.shape[0]
    K = H.shape[1]
    pb = seeds[nsteps] * obs_w
    wb = np.zeros((K, 2))
    P[nsteps] = pb
    W[nsteps] = wb
    PSI[nsteps] = 0.0
    scratch = np.empty((K, 2))
    for n in range(nsteps - 1, -1, -1):
        # u^{n+1} = 1/2 u^n + 1/2 u1 + 1/2 dt L(u1)
        p1 = 0.5 * pb
        w1 = 0.5 * wb
        rhs_vjp(H1[n], V1[n], B, hbar, eps, g, 0.5 * dt * pb, 0.5 * dt * wb,
                p1, w1, scratch)
        P1[n] = p1
        W1[n] = w1
        # u1 = u^n + dt L(u^n)
        pn = 0.5 * pb + p1 + seeds[n] * obs_w
        wn = 0.5 * wb + w1
        rhs_vjp(H[n], V[n], B, hbar, eps, g, dt * p1, dt * w1, pn, wn, PSI[n])
        P[n] = pn
        W[n] = wn
        pb, wb = pn, wn
