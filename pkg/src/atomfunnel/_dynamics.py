"""Compiled force evaluation and velocity-Verlet stepping for guiding runs.

The kernel covers the analytic funnel, the evanescent barrier, the surface
potential and gravity.  Parameter vector layout is given by the ``P_*``
indices below; per-sublevel prefactors are passed separately.
"""

import numpy as np
from numba import njit

P_FUNNEL_ON = 0
P_POWER = 1
P_WAIST = 2
P_ZR = 3
P_FOCUS_Z = 4
P_WS = 5
P_WNF = 6
P_LNF = 7
P_ZC = 8
P_NTAPER = 9
P_ETA = 10
P_BARRIER_ON = 11
P_LB = 12
P_HX = 13
P_CP_ON = 14
P_C4 = 15
P_LBAR = 16
P_GRAV_ON = 17
P_MG = 18
P_MASS = 19
N_PARAMS = 20

# event kinds
EV_ENTRY = 0
EV_TURN = 1
EV_LOSS = 2


@njit(cache=True)
def potential_force(x, y, z, prm, c_red, c_blue):
    """Return ``(U, Fx, Fy, Fz)`` at one point."""
    U = 0.0
    fx = 0.0
    fy = 0.0
    fz = 0.0
    if prm[P_FUNNEL_ON] != 0.0:
        P = prm[P_POWER]
        w0 = prm[P_WAIST]
        zr = prm[P_ZR]
        s = z - prm[P_FOCUS_Z]
        wg2 = w0 * w0 * (1.0 + s * s / (zr * zr))
        dwg2 = 2.0 * w0 * w0 * s / (zr * zr)
        ws2 = prm[P_WS] ** 2
        span = prm[P_WNF] ** 2 - ws2
        e = np.exp(-z / prm[P_LNF])
        nf = span * (1.0 - e)
        dnf = span * e / prm[P_LNF]
        if z > 0.0:
            t = (z / prm[P_ZC]) ** prm[P_NTAPER]
            S = -np.expm1(-t)
            dS = np.exp(-t) * prm[P_NTAPER] * t / z
        else:
            S = 0.0
            dS = 0.0
        wx2 = ws2 + nf + wg2 * S
        dwx2 = dnf + dwg2 * S + wg2 * dS
        eta = prm[P_ETA]
        x2 = x * x
        y2 = y * y
        i_f = eta * 2.0 * P / (np.pi * np.sqrt(wx2 * wg2)) * np.exp(-2.0 * x2 / wx2 - 2.0 * y2 / wg2)
        i_b = (1.0 - eta) * 2.0 * P / (np.pi * wg2) * np.exp(-2.0 * (x2 + y2) / wg2)
        gz_f = -0.5 * dwx2 / wx2 - 0.5 * dwg2 / wg2 + 2.0 * x2 * dwx2 / (wx2 * wx2) + 2.0 * y2 * dwg2 / (wg2 * wg2)
        gz_b = -dwg2 / wg2 + 2.0 * (x2 + y2) * dwg2 / (wg2 * wg2)
        u_f = c_red * i_f
        u_b = c_red * i_b
        U += u_f + u_b
        fx -= u_f * (-4.0 * x / wx2) + u_b * (-4.0 * x / wg2)
        fy -= (u_f + u_b) * (-4.0 * y / wg2)
        fz -= u_f * gz_f + u_b * gz_b
    if prm[P_BARRIER_ON] != 0.0:
        lb = prm[P_LB]
        hx = prm[P_HX]
        ub = c_blue * np.exp(-2.0 * z / lb - 2.0 * x * x / (hx * hx))
        U += ub
        fx += ub * 4.0 * x / (hx * hx)
        fz += ub * 2.0 / lb
    if prm[P_CP_ON] != 0.0:
        c4 = prm[P_C4]
        lbar = prm[P_LBAR]
        U += -c4 / (z * z * z * (z + lbar))
        fz -= c4 * (4.0 * z + 3.0 * lbar) / (z ** 4 * (z + lbar) ** 2)
    if prm[P_GRAV_ON] != 0.0:
        U += prm[P_MG] * z
        fz -= prm[P_MG]
    return U, fx, fy, fz


@njit(cache=True)
def run_atom(
    r0, v0, prm, c_red, c_blue,
    t_end, dts, z_tiers, z_min,
    rec_dt, coarse,
    fine_z, fine_dt, fine,
    nf_box, events,
):
    """Integrate one atom.

    ``dts = (far, mid, near)`` with ``z_tiers = (z_mid, z_near)``.  ``coarse``
    receives rows ``(t, x, y, z, vx, vy, vz, E)`` every ``rec_dt``; ``fine``
    receives ``(t, x, y, z)`` every ``fine_dt`` while ``z < fine_z``;
    ``events`` receives ``(kind, t, x, y, z)``.  Returns
    ``(n_coarse, n_fine, n_events, lost, fine_overflow)``.
    """
    m = prm[P_MASS]
    x, y, z = r0[0], r0[1], r0[2]
    vx, vy, vz = v0[0], v0[1], v0[2]
    U, fx, fy, fz = potential_force(x, y, z, prm, c_red, c_blue)
    t = 0.0
    n_c = 0
    n_f = 0
    n_e = 0
    lost = False
    overflow = False
    next_rec = 0.0
    next_fine = 0.0
    inside = (z < nf_box[0]) and (abs(x) < nf_box[1]) and (abs(y) < nf_box[2])
    max_c = coarse.shape[0]
    max_f = fine.shape[0]
    max_e = events.shape[0]
    while True:
        if t >= next_rec - 1e-15 and n_c < max_c:
            coarse[n_c, 0] = t
            coarse[n_c, 1] = x
            coarse[n_c, 2] = y
            coarse[n_c, 3] = z
            coarse[n_c, 4] = vx
            coarse[n_c, 5] = vy
            coarse[n_c, 6] = vz
            coarse[n_c, 7] = U + 0.5 * m * (vx * vx + vy * vy + vz * vz)
            n_c += 1
            next_rec = n_c * rec_dt
        if t >= t_end:
            break
        if z < fine_z and t >= next_fine - 1e-15:
            if n_f < max_f:
                fine[n_f, 0] = t
                fine[n_f, 1] = x
                fine[n_f, 2] = y
                fine[n_f, 3] = z
                n_f += 1
            else:
                overflow = True
            next_fine = t + fine_dt
        if z < z_tiers[1]:
            dt = dts[2]
        elif z < z_tiers[0]:
            dt = dts[1]
        else:
            dt = dts[0]
        # land exactly on record times in the far field
        if dt > next_rec - t and next_rec > t:
            dt = next_rec - t
        if dt > t_end - t:
            dt = t_end - t
        vz_old = vz
        hx = 0.5 * dt / m
        vx += hx * fx
        vy += hx * fy
        vz += hx * fz
        x += dt * vx
        y += dt * vy
        z += dt * vz
        t += dt
        if z <= z_min:
            lost = True
            if n_e < max_e:
                events[n_e, 0] = EV_LOSS
                events[n_e, 1] = t
                events[n_e, 2] = x
                events[n_e, 3] = y
                events[n_e, 4] = z
                n_e += 1
            break
        U, fx, fy, fz = potential_force(x, y, z, prm, c_red, c_blue)
        vx += hx * fx
        vy += hx * fy
        vz += hx * fz
        now_inside = (z < nf_box[0]) and (abs(x) < nf_box[1]) and (abs(y) < nf_box[2])
        if now_inside and not inside and n_e < max_e:
            events[n_e, 0] = EV_ENTRY
            events[n_e, 1] = t
            events[n_e, 2] = x
            events[n_e, 3] = y
            events[n_e, 4] = z
            n_e += 1
        inside = now_inside
        if vz_old < 0.0 and vz >= 0.0 and z < fine_z and n_e < max_e:
            events[n_e, 0] = EV_TURN
            events[n_e, 1] = t
            events[n_e, 2] = x
            events[n_e, 3] = y
            events[n_e, 4] = z
            n_e += 1
    return n_c, n_f, n_e, lost, overflow
