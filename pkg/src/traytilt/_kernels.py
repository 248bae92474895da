"""Compiled inner loops for the tilt simulator.

Everything here works on plain floats and arrays so numba can compile it;
the public wrappers live in :mod:`traytilt.dynamics`. ``fastmath`` stays off
so results are bitwise reproducible.
"""
import math

import numpy as np
from numba import njit

SETTLED = 0
TIMEOUT = 1
BLOWUP = 2

# near-rest speed, in units of v_stick, below which the stick test applies
STICK_GATE = 2.0


@njit(cache=True)
def mu_interp(grid, fa, fb, x, y):
    n = grid.shape[0]
    if x < 0.0:
        x = 0.0
    elif x > fa:
        x = fa
    if y < 0.0:
        y = 0.0
    elif y > fb:
        y = fb
    fx = x * ((n - 1) / fa)
    fy = y * ((n - 1) / fb)
    i = int(fx)
    j = int(fy)
    if i > n - 2:
        i = n - 2
    if j > n - 2:
        j = n - 2
    tx = fx - i
    ty = fy - j
    g00 = grid[i, j]
    g10 = grid[i + 1, j]
    g01 = grid[i, j + 1]
    g11 = grid[i + 1, j + 1]
    return ((1.0 - tx) * (1.0 - ty) * g00 + tx * (1.0 - ty) * g10
            + (1.0 - tx) * ty * g01 + tx * ty * g11)


@njit(cache=True)
def floor_friction(x, y, c, s, vx, vy, w, sup, share, load, grid, fa, fb, v_stick,
                   mu_const):
    """Net floor friction force and torque about the COM.

    ``load`` is the total normal force; each support carries ``share * load``.
    Below ``v_stick`` the force is linear in slip velocity (regularized stick).
    A positive ``mu_const`` skips the field lookup for uniform fields.
    """
    fx = 0.0
    fy = 0.0
    tq = 0.0
    for p in range(sup.shape[0]):
        rx = c * sup[p, 0] - s * sup[p, 1]
        ry = s * sup[p, 0] + c * sup[p, 1]
        ux = vx - w * ry
        uy = vy + w * rx
        speed = math.sqrt(ux * ux + uy * uy)
        if speed == 0.0:
            continue
        if mu_const > 0.0:
            mu = mu_const
        else:
            mu = mu_interp(grid, fa, fb, x + rx, y + ry)
        denom = speed if speed > v_stick else v_stick
        k = -mu * share[p] * load / denom
        px = k * ux
        py = k * uy
        fx += px
        fy += py
        tq += rx * py - ry * px
    return fx, fy, tq


@njit(cache=True)
def friction_capacity(x, y, c, s, sup, share, load, grid, fa, fb, mu_const):
    """Largest floor friction force and torque about the COM (limit-surface axes)."""
    fmax = 0.0
    tmax = 0.0
    for p in range(sup.shape[0]):
        rx = c * sup[p, 0] - s * sup[p, 1]
        ry = s * sup[p, 0] + c * sup[p, 1]
        if mu_const > 0.0:
            mu = mu_const
        else:
            mu = mu_interp(grid, fa, fb, x + rx, y + ry)
        f = mu * share[p] * load
        fmax += f
        tmax += f * math.sqrt(rx * rx + ry * ry)
    return fmax, tmax


@njit(cache=True)
def wall_forces(x, y, c, s, vx, vy, w, verts, ta, tb, k_wall, c_wall, mu_wall, v_stick,
                mass, inertia, cap_dt):
    """Penalty contact of polygon vertices against the four tray walls.

    Stiffness and damping are capped per contact at half the explicit
    stability limit for the contact's effective mass at step ``cap_dt``, so
    light parts and long lever arms stay stable. ``cap_dt`` is fixed apart
    from the integration step so the contact law does not change with ``dt``.
    Returns force, torque and the deepest penetration seen this step.
    """
    fx = 0.0
    fy = 0.0
    tq = 0.0
    deepest = 0.0
    for p in range(verts.shape[0]):
        rx = c * verts[p, 0] - s * verts[p, 1]
        ry = s * verts[p, 0] + c * verts[p, 1]
        px = x + rx
        py = y + ry
        ux = vx - w * ry
        uy = vy + w * rx
        for wall in range(4):
            if wall == 0:
                depth = -px
                nx, ny = 1.0, 0.0
            elif wall == 1:
                depth = px - ta
                nx, ny = -1.0, 0.0
            elif wall == 2:
                depth = -py
                nx, ny = 0.0, 1.0
            else:
                depth = py - tb
                nx, ny = 0.0, -1.0
            if depth <= 0.0:
                continue
            if depth > deepest:
                deepest = depth
            # approach speed is the velocity component against the inward normal
            approach = -(ux * nx + uy * ny)
            rn = rx * ny - ry * nx
            meff = 1.0 / (1.0 / mass + rn * rn / inertia)
            k_eff = min(k_wall, 0.5 * meff / (cap_dt * cap_dt))
            c_eff = min(c_wall, 0.5 * meff / cap_dt)
            fn = k_eff * depth
            if approach > 0.0:
                fn += c_eff * approach
            if fn <= 0.0:
                continue
            # tangent direction (-ny, nx); tangential slip along it
            vt = -ux * ny + uy * nx
            avt = abs(vt)
            denom = avt if avt > v_stick else v_stick
            ft = -mu_wall * fn * vt / denom
            cfx = fn * nx - ft * ny
            cfy = fn * ny + ft * nx
            fx += cfx
            fy += cfy
            tq += rx * cfy - ry * cfx
    return fx, fy, tq, deepest


@njit(cache=True)
def run_tilt(verts, sup, share, mass, inertia, grid, fa, fb, ta, tb,
             gx, gy, load, dt, cap_dt, k_wall, c_wall, mu_wall, v_stick,
             settle_v, settle_w, hold_steps, max_steps, pen_limit,
             x0, y0, th0, trace, mu_const):
    """Semi-implicit Euler from rest until settled, timed out or blown up.

    ``gx, gy`` is the in-plane gravity acceleration. ``trace`` has either
    zero rows or ``max_steps`` rows; row ``i`` holds the state entering step
    ``i`` as (t, x, y, th, vx, vy, w, pen).
    Near rest the part sticks outright when the applied load lies inside
    the ellipsoidal limit surface of floor friction; otherwise the
    regularized Coulomb law below ``v_stick`` would let it creep.
    Returns (status, x, y, th, vx, vy, w, steps, max_penetration).
    """
    rho = 0.0
    for p in range(sup.shape[0]):
        r = math.sqrt(sup[p, 0] * sup[p, 0] + sup[p, 1] * sup[p, 1])
        if r > rho:
            rho = r
    x = x0
    y = y0
    th = th0
    vx = 0.0
    vy = 0.0
    w = 0.0
    quiet = 0
    max_pen = 0.0
    record = trace.shape[0] > 0
    status = TIMEOUT
    step = 0
    while step < max_steps:
        c = math.cos(th)
        s = math.sin(th)
        ffx, ffy, ftq = floor_friction(x, y, c, s, vx, vy, w, sup, share, load,
                                       grid, fa, fb, v_stick, mu_const)
        wfx, wfy, wtq, pen = wall_forces(x, y, c, s, vx, vy, w, verts, ta, tb,
                                         k_wall, c_wall, mu_wall, v_stick,
                                         mass, inertia, cap_dt)
        if pen > max_pen:
            max_pen = pen
        if record:
            trace[step, 0] = step * dt
            trace[step, 1] = x
            trace[step, 2] = y
            trace[step, 3] = th
            trace[step, 4] = vx
            trace[step, 5] = vy
            trace[step, 6] = w
            trace[step, 7] = pen
        if pen > pen_limit:
            status = BLOWUP
            break
        gate = STICK_GATE * v_stick
        if math.sqrt(vx * vx + vy * vy) < gate and abs(w) * rho < gate:
            fmax, tmax = friction_capacity(x, y, c, s, sup, share, load, grid, fa, fb,
                                           mu_const)
            ax = mass * gx + wfx
            ay = mass * gy + wfy
            if (ax * ax + ay * ay) / (fmax * fmax) + (wtq * wtq) / (tmax * tmax) <= 1.0:
                vx = 0.0
                vy = 0.0
                w = 0.0
                step += 1
                quiet += 1
                if quiet >= hold_steps:
                    status = SETTLED
                    break
                continue
        vx += dt * (gx + (ffx + wfx) / mass)
        vy += dt * (gy + (ffy + wfy) / mass)
        w += dt * (ftq + wtq) / inertia
        x += dt * vx
        y += dt * vy
        th += dt * w
        step += 1
        if math.sqrt(vx * vx + vy * vy) < settle_v and abs(w) < settle_w:
            quiet += 1
            if quiet >= hold_steps:
                status = SETTLED
                break
        else:
            quiet = 0
    return status, x, y, th, vx, vy, w, step, max_pen


def empty_trace():
    return np.zeros((0, 8))
