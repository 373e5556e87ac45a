"""Numba-compiled capsule-field kernels.

Scalar re-derivation of raster._capsule_forward / _capsule_backward: one fused
loop nest per pixel, so neither pass materializes (n, M, K) temporaries; the
backward recomputes the per-pixel intermediates in registers instead of
caching them.  Math and constants mirror the numpy implementation exactly up
to floating-point association; tests cross-check the two to tight tolerance.

Constants arrive via a small same-dtype array so float32 inputs stay float32
throughout (a bare Python literal would promote every expression to float64).
"""

from __future__ import annotations

import numba
import numpy as np

# consts layout: [inv_soft, clamp_eps, dist_eps2, shading_slope, 1.0, 1e-12, 1e-9]


@numba.njit(cache=True, fastmath=False)
def capsule_forward(ax, ay, sx, sy, h, a, px, py, taper, consts):
    n, K = ax.shape
    M = px.shape[0]
    inv_soft = consts[0]
    ceps = consts[1]
    deps2 = consts[2]
    slope = consts[3]
    one = consts[4]
    eps12 = consts[5]
    eps9 = consts[6]
    out = np.empty((2, n, M), dtype=ax.dtype)
    invL = np.empty_like(taper)
    d2v = np.empty_like(taper)
    tk = np.empty_like(taper)
    zbuf = np.empty_like(taper)
    dbuf = np.empty_like(taper)
    half = one / 2
    quarter = one / 4
    for i in range(n):
        for k in range(K):
            L = sx[i, k] * sx[i, k] + sy[i, k] * sy[i, k] + eps12
            invL[k] = one / L
            dc = ceps / np.sqrt(L + eps12)
            d2v[k] = dc * dc
            tk[k] = h[i] * taper[k]
        ai = a[i]
        for m in range(M):
            for k in range(K):
                rx = px[m] - ax[i, k]
                ry = py[m] - ay[i, k]
                u = (rx * sx[i, k] + ry * sy[i, k]) * invL[k]
                s1 = np.sqrt(u * u + d2v[k])
                s2 = np.sqrt((u - one) * (u - one) + d2v[k])
                ss = (s1 - s2 + one) * half
                ex = rx - sx[i, k] * ss
                ey = ry - sy[i, k] * ss
                dist = np.sqrt(ex * ex + ey * ey + deps2)
                dbuf[k] = dist
                zbuf[k] = (tk[k] - dist) * inv_soft
            zmax = zbuf[0]
            for k in range(1, K):
                if zbuf[k] > zmax:
                    zmax = zbuf[k]
            S = zbuf[0] * 0
            for k in range(K):
                S += np.exp(zbuf[k] - zmax)
            lse = zmax + np.log(S)
            if lse >= 0:
                mask = one / (one + np.exp(-lse))
            else:
                e = np.exp(lse)
                mask = e / (one + e)
            num = S * 0
            den = S * 0
            for k in range(K):
                z = zbuf[k]
                if z >= 0:
                    sig = one / (one + np.exp(-z))
                else:
                    e = np.exp(z)
                    sig = e / (one + e)
                r = dbuf[k] / (tk[k] + eps12)
                rr = r * quarter
                y = rr * rr
                y = y * y + one
                q = np.sqrt(np.sqrt(y))
                sh = one - slope * (r / q)
                num += sh * sig
                den += sig
            den += eps9
            out[0, i, m] = mask * (num / den)
            out[1, i, m] = ai * mask
    return out


@numba.njit(cache=True, fastmath=False)
def render_forward(ax, ay, sx, sy, h, a, cr, cg, cb, bg, px, py, taper, consts):
    """Full soft sequence render with over-compositing, (M, 3) canvas."""
    n, K = ax.shape
    M = px.shape[0]
    inv_soft = consts[0]
    ceps = consts[1]
    deps2 = consts[2]
    slope = consts[3]
    one = consts[4]
    eps12 = consts[5]
    eps9 = consts[6]
    half = one / 2
    quarter = one / 4
    out = np.empty((M, 3), dtype=ax.dtype)
    invL = np.empty((n, K), dtype=ax.dtype)
    d2v = np.empty((n, K), dtype=ax.dtype)
    tk = np.empty((n, K), dtype=ax.dtype)
    zbuf = np.empty_like(taper)
    dbuf = np.empty_like(taper)
    for i in range(n):
        for k in range(K):
            L = sx[i, k] * sx[i, k] + sy[i, k] * sy[i, k] + eps12
            invL[i, k] = one / L
            dc = ceps / np.sqrt(L + eps12)
            d2v[i, k] = dc * dc
            tk[i, k] = h[i] * taper[k]
    for m in range(M):
        c0 = bg[m, 0]
        c1 = bg[m, 1]
        c2 = bg[m, 2]
        for i in range(n):
            for k in range(K):
                rx = px[m] - ax[i, k]
                ry = py[m] - ay[i, k]
                u = (rx * sx[i, k] + ry * sy[i, k]) * invL[i, k]
                s1 = np.sqrt(u * u + d2v[i, k])
                s2 = np.sqrt((u - one) * (u - one) + d2v[i, k])
                ss = (s1 - s2 + one) * half
                ex = rx - sx[i, k] * ss
                ey = ry - sy[i, k] * ss
                dist = np.sqrt(ex * ex + ey * ey + deps2)
                dbuf[k] = dist
                zbuf[k] = (tk[i, k] - dist) * inv_soft
            zmax = zbuf[0]
            for k in range(1, K):
                if zbuf[k] > zmax:
                    zmax = zbuf[k]
            S = zbuf[0] * 0
            for k in range(K):
                S += np.exp(zbuf[k] - zmax)
            lse = zmax + np.log(S)
            if lse >= 0:
                mask = one / (one + np.exp(-lse))
            else:
                e = np.exp(lse)
                mask = e / (one + e)
            num = S * 0
            den = S * 0
            for k in range(K):
                z = zbuf[k]
                if z >= 0:
                    sig = one / (one + np.exp(-z))
                else:
                    e = np.exp(z)
                    sig = e / (one + e)
                r = dbuf[k] / (tk[i, k] + eps12)
                rr = r * quarter
                y = rr * rr
                y = y * y + one
                q = np.sqrt(np.sqrt(y))
                num += (one - slope * (r / q)) * sig
                den += sig
            den += eps9
            inten = mask * (num / den)
            al = a[i] * mask
            c0 = inten * cr[i] * al + c0 * (one - al)
            c1 = inten * cg[i] * al + c1 * (one - al)
            c2 = inten * cb[i] * al + c2 * (one - al)
        out[m, 0] = c0
        out[m, 1] = c1
        out[m, 2] = c2
    return out


@numba.njit(cache=True, fastmath=False)
def render_backward(g, ax, ay, sx, sy, h, a, cr, cg, cb, bg, px, py, taper, consts):
    """Reverse sweep of render_forward.

    Recomputes the per-pixel forward (storing per-stroke intermediates in
    (n, K) locals), then walks the strokes in reverse order carrying the
    downstream canvas gradient through each over-composite."""
    n, K = ax.shape
    M = px.shape[0]
    inv_soft = consts[0]
    ceps = consts[1]
    deps2 = consts[2]
    slope = consts[3]
    one = consts[4]
    eps12 = consts[5]
    eps9 = consts[6]
    half = one / 2
    quarter = one / 4
    dt = ax.dtype
    g_ax = np.zeros_like(ax)
    g_ay = np.zeros_like(ay)
    g_sx = np.zeros_like(sx)
    g_sy = np.zeros_like(sy)
    g_h = np.zeros_like(h)
    g_a = np.zeros_like(a)
    g_cr = np.zeros_like(cr)
    g_cg = np.zeros_like(cg)
    g_cb = np.zeros_like(cb)
    g_bg = np.empty((M, 3), dtype=dt)
    invL = np.empty((n, K), dtype=dt)
    Lv = np.empty((n, K), dtype=dt)
    d2v = np.empty((n, K), dtype=dt)
    tk = np.empty((n, K), dtype=dt)
    ub = np.empty((n, K), dtype=dt)
    s1b = np.empty((n, K), dtype=dt)
    s2b = np.empty((n, K), dtype=dt)
    ssb = np.empty((n, K), dtype=dt)
    exb = np.empty((n, K), dtype=dt)
    eyb = np.empty((n, K), dtype=dt)
    dib = np.empty((n, K), dtype=dt)
    zb = np.empty((n, K), dtype=dt)
    eb = np.empty((n, K), dtype=dt)
    sigb = np.empty((n, K), dtype=dt)
    rb = np.empty((n, K), dtype=dt)
    yqb = np.empty((n, K), dtype=dt)
    shb = np.empty((n, K), dtype=dt)
    rxb = np.empty((n, K), dtype=dt)
    ryb = np.empty((n, K), dtype=dt)
    maskb = np.empty(n, dtype=dt)
    numb = np.empty(n, dtype=dt)
    denb = np.empty(n, dtype=dt)
    iSb = np.empty(n, dtype=dt)
    intb = np.empty(n, dtype=dt)
    alb = np.empty(n, dtype=dt)
    cp0 = np.empty(n, dtype=dt)
    cp1 = np.empty(n, dtype=dt)
    cp2 = np.empty(n, dtype=dt)
    for i in range(n):
        for k in range(K):
            L = sx[i, k] * sx[i, k] + sy[i, k] * sy[i, k] + eps12
            Lv[i, k] = L
            invL[i, k] = one / L
            dc = ceps / np.sqrt(L + eps12)
            d2v[i, k] = dc * dc
            tk[i, k] = h[i] * taper[k]
    for m in range(M):
        c0 = bg[m, 0]
        c1 = bg[m, 1]
        c2 = bg[m, 2]
        # forward recomputation, caching everything the reverse sweep needs
        for i in range(n):
            for k in range(K):
                rx = px[m] - ax[i, k]
                ry = py[m] - ay[i, k]
                u = (rx * sx[i, k] + ry * sy[i, k]) * invL[i, k]
                s1 = np.sqrt(u * u + d2v[i, k])
                s2 = np.sqrt((u - one) * (u - one) + d2v[i, k])
                ss = (s1 - s2 + one) * half
                ex = rx - sx[i, k] * ss
                ey = ry - sy[i, k] * ss
                dist = np.sqrt(ex * ex + ey * ey + deps2)
                rxb[i, k] = rx
                ryb[i, k] = ry
                ub[i, k] = u
                s1b[i, k] = s1
                s2b[i, k] = s2
                ssb[i, k] = ss
                exb[i, k] = ex
                eyb[i, k] = ey
                dib[i, k] = dist
                zb[i, k] = (tk[i, k] - dist) * inv_soft
            zmax = zb[i, 0]
            for k in range(1, K):
                if zb[i, k] > zmax:
                    zmax = zb[i, k]
            S = zmax * 0
            for k in range(K):
                eb[i, k] = np.exp(zb[i, k] - zmax)
                S += eb[i, k]
            lse = zmax + np.log(S)
            if lse >= 0:
                mask = one / (one + np.exp(-lse))
            else:
                e = np.exp(lse)
                mask = e / (one + e)
            num = S * 0
            den = S * 0
            for k in range(K):
                z = zb[i, k]
                if z >= 0:
                    sig = one / (one + np.exp(-z))
                else:
                    e = np.exp(z)
                    sig = e / (one + e)
                r = dib[i, k] / (tk[i, k] + eps12)
                rr = r * quarter
                y = rr * rr
                y = y * y + one
                q = np.sqrt(np.sqrt(y))
                sigb[i, k] = sig
                rb[i, k] = r
                yqb[i, k] = y * q
                shb[i, k] = one - slope * (r / q)
                num += shb[i, k] * sig
                den += sig
            den += eps9
            maskb[i] = mask
            numb[i] = num
            denb[i] = den
            iSb[i] = one / S
            inten = mask * (num / den)
            al = a[i] * mask
            intb[i] = inten
            alb[i] = al
            cp0[i] = c0
            cp1[i] = c1
            cp2[i] = c2
            c0 = inten * cr[i] * al + c0 * (one - al)
            c1 = inten * cg[i] * al + c1 * (one - al)
            c2 = inten * cb[i] * al + c2 * (one - al)
        # reverse sweep through the composites
        g0 = g[m, 0]
        g1 = g[m, 1]
        g2 = g[m, 2]
        for i in range(n - 1, -1, -1):
            al = alb[i]
            inten = intb[i]
            mask = maskb[i]
            num = numb[i]
            den = denb[i]
            g_cr[i] += g0 * al * inten
            g_cg[i] += g1 * al * inten
            g_cb[i] += g2 * al * inten
            g_inten = (g0 * cr[i] + g1 * cg[i] + g2 * cb[i]) * al
            g_al = (g0 * (inten * cr[i] - cp0[i]) + g1 * (inten * cg[i] - cp1[i])
                    + g2 * (inten * cb[i] - cp2[i]))
            g0 *= one - al
            g1 *= one - al
            g2 *= one - al
            g_a[i] += g_al * mask
            gmask = g_al * a[i] + g_inten * (num / den)
            glse = gmask * mask * (one - mask)
            c1g = g_inten * (mask / den)
            c2g = c1g * (num / den)
            for k in range(K):
                sig = sigb[i, k]
                r = rb[i, k]
                g_sig = c1g * shb[i, k] - c2g
                g_r = -slope * c1g * sig / yqb[i, k]
                invt = one / (tk[i, k] + eps12)
                g_dist = g_r * invt
                g_t = -(g_r * r) * invt
                p_soft = eb[i, k] * iSb[i]
                g_z = g_sig * sig * (one - sig) + glse * p_soft
                g_t += g_z * inv_soft
                g_dist -= g_z * inv_soft
                g_h[i] += g_t * taper[k]
                gd = g_dist / dib[i, k]
                g_ex = gd * exb[i, k]
                g_ey = gd * eyb[i, k]
                g_ss = -(g_ex * sx[i, k] + g_ey * sy[i, k])
                g_rx = g_ex
                g_ry = g_ey
                g_sxa = -g_ex * ssb[i, k]
                g_sya = -g_ey * ssb[i, k]
                g_s1 = half * g_ss
                u = ub[i, k]
                g_u = g_s1 * (u / s1b[i, k] - (u - one) / s2b[i, k])
                g_d2 = g_s1 * (half / s1b[i, k] - half / s2b[i, k])
                guL = g_u * invL[i, k]
                g_rx += guL * sx[i, k]
                g_ry += guL * sy[i, k]
                g_sxa += guL * rxb[i, k]
                g_sya += guL * ryb[i, k]
                g_L = -guL * u - (d2v[i, k] / (Lv[i, k] + eps12)) * g_d2
                g_sx[i, k] += g_sxa + 2 * sx[i, k] * g_L
                g_sy[i, k] += g_sya + 2 * sy[i, k] * g_L
                g_ax[i, k] -= g_rx
                g_ay[i, k] -= g_ry
        g_bg[m, 0] = g0
        g_bg[m, 1] = g1
        g_bg[m, 2] = g2
    return g_ax, g_ay, g_sx, g_sy, g_h, g_a, g_cr, g_cg, g_cb, g_bg


@numba.njit(cache=True, fastmath=False)
def capsule_backward(gI, gA, ax, ay, sx, sy, h, a, px, py, taper, consts):
    n, K = ax.shape
    M = px.shape[0]
    inv_soft = consts[0]
    ceps = consts[1]
    deps2 = consts[2]
    slope = consts[3]
    one = consts[4]
    eps12 = consts[5]
    eps9 = consts[6]
    half = one / 2
    quarter = one / 4
    g_ax = np.zeros_like(ax)
    g_ay = np.zeros_like(ay)
    g_sx = np.zeros_like(sx)
    g_sy = np.zeros_like(sy)
    g_h = np.zeros_like(h)
    g_a = np.zeros_like(a)
    invL = np.empty_like(taper)
    Lv = np.empty_like(taper)
    d2v = np.empty_like(taper)
    tk = np.empty_like(taper)
    zbuf = np.empty_like(taper)
    dbuf = np.empty_like(taper)
    ubuf = np.empty_like(taper)
    s1b = np.empty_like(taper)
    s2b = np.empty_like(taper)
    ssb = np.empty_like(taper)
    exb = np.empty_like(taper)
    eyb = np.empty_like(taper)
    rxb = np.empty_like(taper)
    ryb = np.empty_like(taper)
    ebuf = np.empty_like(taper)
    sigb = np.empty_like(taper)
    rb = np.empty_like(taper)
    yqb = np.empty_like(taper)
    shb = np.empty_like(taper)
    for i in range(n):
        for k in range(K):
            L = sx[i, k] * sx[i, k] + sy[i, k] * sy[i, k] + eps12
            Lv[k] = L
            invL[k] = one / L
            dc = ceps / np.sqrt(L + eps12)
            d2v[k] = dc * dc
            tk[k] = h[i] * taper[k]
        ai = a[i]
        for m in range(M):
            # forward recomputation for this pixel
            for k in range(K):
                rx = px[m] - ax[i, k]
                ry = py[m] - ay[i, k]
                u = (rx * sx[i, k] + ry * sy[i, k]) * invL[k]
                s1 = np.sqrt(u * u + d2v[k])
                s2 = np.sqrt((u - one) * (u - one) + d2v[k])
                ss = (s1 - s2 + one) * half
                ex = rx - sx[i, k] * ss
                ey = ry - sy[i, k] * ss
                dist = np.sqrt(ex * ex + ey * ey + deps2)
                rxb[k] = rx
                ryb[k] = ry
                ubuf[k] = u
                s1b[k] = s1
                s2b[k] = s2
                ssb[k] = ss
                exb[k] = ex
                eyb[k] = ey
                dbuf[k] = dist
                zbuf[k] = (tk[k] - dist) * inv_soft
            zmax = zbuf[0]
            for k in range(1, K):
                if zbuf[k] > zmax:
                    zmax = zbuf[k]
            S = zbuf[0] * 0
            for k in range(K):
                ebuf[k] = np.exp(zbuf[k] - zmax)
                S += ebuf[k]
            lse = zmax + np.log(S)
            if lse >= 0:
                mask = one / (one + np.exp(-lse))
            else:
                e = np.exp(lse)
                mask = e / (one + e)
            num = S * 0
            den = S * 0
            for k in range(K):
                z = zbuf[k]
                if z >= 0:
                    sig = one / (one + np.exp(-z))
                else:
                    e = np.exp(z)
                    sig = e / (one + e)
                r = dbuf[k] / (tk[k] + eps12)
                rr = r * quarter
                y = rr * rr
                y = y * y + one
                q = np.sqrt(np.sqrt(y))
                sigb[k] = sig
                rb[k] = r
                yqb[k] = y * q
                shb[k] = one - slope * (r / q)
                num += shb[k] * sig
                den += sig
            den += eps9
            # backward
            gIm = gI[i, m]
            gAm = gA[i, m]
            gmask = gAm * ai + gIm * (num / den)
            g_a[i] += gAm * mask
            glse = gmask * mask * (one - mask)
            c1 = gIm * (mask / den)
            c2 = c1 * (num / den)
            inv_S = one / S
            for k in range(K):
                sig = sigb[k]
                r = rb[k]
                g_sig = c1 * shb[k] - c2
                # d(r / y^(1/4))/dr collapses to y^(-5/4)
                g_r = -slope * c1 * sig / yqb[k]
                invt = one / (tk[k] + eps12)
                g_dist = g_r * invt
                g_t = -(g_r * r) * invt
                p_soft = ebuf[k] * inv_S
                g_z = g_sig * sig * (one - sig) + glse * p_soft
                g_t += g_z * inv_soft
                g_dist -= g_z * inv_soft
                g_h[i] += g_t * taper[k]
                gd = g_dist / dbuf[k]
                g_ex = gd * exb[k]
                g_ey = gd * eyb[k]
                g_ss = -(g_ex * sx[i, k] + g_ey * sy[i, k])
                g_rx = g_ex
                g_ry = g_ey
                g_sxa = -g_ex * ssb[k]
                g_sya = -g_ey * ssb[k]
                g_s1 = half * g_ss
                u = ubuf[k]
                g_u = g_s1 * (u / s1b[k] - (u - one) / s2b[k])
                g_d2 = g_s1 * (half / s1b[k] - half / s2b[k])
                guL = g_u * invL[k]
                g_rx += guL * sx[i, k]
                g_ry += guL * sy[i, k]
                g_sxa += guL * rxb[k]
                g_sya += guL * ryb[k]
                g_L = -guL * u - (d2v[k] / (Lv[k] + eps12)) * g_d2
                g_sx[i, k] += g_sxa + 2 * sx[i, k] * g_L
                g_sy[i, k] += g_sya + 2 * sy[i, k] * g_L
                g_ax[i, k] -= g_rx
                g_ay[i, k] -= g_ry
    return g_ax, g_ay, g_sx, g_sy, g_h, g_a


@numba.njit(cache=True, fastmath=False)
def oracle_forward(qx, qy, thick, px, py, deps2, slope):
    """Hard stroke mask over K polyline segments: (intensity, inside) per
    pixel.  Same clipped-projection distance metric as the soft kernels."""
    K = thick.shape[0]
    M = px.shape[0]
    sx = np.empty(K)
    sy = np.empty(K)
    inv2 = np.empty(K)
    for k in range(K):
        sx[k] = qx[k + 1] - qx[k]
        sy[k] = qy[k + 1] - qy[k]
        inv2[k] = 1.0 / (sx[k] * sx[k] + sy[k] * sy[k] + 1e-12)
    out = np.zeros((2, M))
    for m in range(M):
        best = 0.0
        inside = 0.0
        for k in range(K):
            rx = px[m] - qx[k]
            ry = py[m] - qy[k]
            u = (rx * sx[k] + ry * sy[k]) * inv2[k]
            if u < 0.0:
                u = 0.0
            elif u > 1.0:
                u = 1.0
            ex = rx - sx[k] * u
            ey = ry - sy[k] * u
            dist = np.sqrt(ex * ex + ey * ey + deps2)
            if thick[k] > 0.0 and dist <= thick[k]:
                inside = 1.0
                sh = 1.0 - slope * dist / thick[k]
                if sh > best:
                    best = sh
        out[0, m] = best
        out[1, m] = inside
    return out
