"""Compiled per-branch bound arithmetic.

Each branch is processed independently with a fixed operation order, so the
results do not depend on how a batch is split across workers.

Log-ratio terms are written with ``g(x) = log Z(x) - x``, which is decreasing
for x > 0; the exponential part of every ratio then appears as a difference of
concentrations that is cheap to bound. Terms whose log is provably below
``_LOG_CUTOFF`` are skipped (each contributes less than 1e-26).
"""

import math

import numpy as np
from numba import njit

_LOG_CUTOFF = -60.0
_LOG2 = math.log(2.0)
_SQRT3 = math.sqrt(3.0)

STATUS_OK = 0
STATUS_INFEASIBLE = 1
STATUS_CENTER_INFEASIBLE = 2


@njit(cache=True, nogil=True)
def g_fn(x):
    if x < 1e-6:
        return _LOG2 + x * x / 6.0 - x
    if x > 20.0:
        # log(1 - exp(-2x)) is below 1e-17 here
        return -math.log(x)
    return math.log(-math.expm1(-2.0 * x)) - math.log(x)


@njit(cache=True, nogil=True)
def exp_g_plus(x, a):
    """``exp(g(x) + a)``; above x = 20 this is ``exp(a) / x`` without the logarithm."""
    if x > 20.0:
        return math.exp(a) / x
    return math.exp(g_fn(x) + a)


@njit(cache=True, nogil=True)
def log_z(x):
    return g_fn(x) + x


@njit(cache=True, nogil=True)
def rodrigues3(r, out):
    t2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2]
    if t2 < 1e-16:
        a = 1.0 - t2 / 6.0
        b = 0.5 - t2 / 24.0
    else:
        t = math.sqrt(t2)
        a = math.sin(t) / t
        b = (1.0 - math.cos(t)) / t2
    x, y, z = r[0], r[1], r[2]
    out[0, 0] = 1.0 - b * (y * y + z * z)
    out[0, 1] = -a * z + b * x * y
    out[0, 2] = a * y + b * x * z
    out[1, 0] = a * z + b * x * y
    out[1, 1] = 1.0 - b * (x * x + z * z)
    out[1, 2] = -a * x + b * y * z
    out[2, 0] = -a * y + b * x * z
    out[2, 1] = a * x + b * y * z
    out[2, 2] = 1.0 - b * (x * x + y * y)


@njit(cache=True, nogil=True)
def _angle(ax, ay, az, bx, by, bz):
    cx = ay * bz - az * by
    cy = az * bx - ax * bz
    cz = ax * by - ay * bx
    return math.atan2(math.sqrt(cx * cx + cy * cy + cz * cz), ax * bx + ay * by + az * bz)


@njit(cache=True, nogil=True)
def _kfun(a, b, c):
    v = a * a + b * b + 2.0 * c * a * b
    return math.sqrt(v) if v > 0.0 else 0.0


@njit(cache=True, nogil=True)
def _psi_box(ax, ay, az, hx, hy, hz):
    """Largest angle between ``a - d`` and ``a`` over ``|d_k| <= h_k``; ``a`` lies outside the box.

    The box seen from the apex projects to a spherical polygon inside an open
    hemisphere that excludes the antipode of ``a``, so the farthest direction
    lies on an edge: at a vertex or at the single interior critical point of
    the cosine along that edge.
    """
    cmin = math.inf
    bx = ax
    by = ay
    bz = az
    for sx in (-1.0, 1.0):
        for sy in (-1.0, 1.0):
            for sz in (-1.0, 1.0):
                vx = ax - sx * hx
                vy = ay - sy * hy
                vz = az - sz * hz
                cv = (vx * ax + vy * ay + vz * az) / math.sqrt(vx * vx + vy * vy + vz * vz)
                if cv < cmin:
                    cmin = cv
                    bx = vx
                    by = vy
                    bz = vz
    for k in range(3):
        for s1 in (-1.0, 1.0):
            for s2 in (-1.0, 1.0):
                # edge points u - lam e, lam in [0, 1], running along axis k
                if k == 0:
                    ux, uy, uz = ax + hx, ay - s1 * hy, az - s2 * hz
                    ex, ey, ez = 2.0 * hx, 0.0, 0.0
                elif k == 1:
                    ux, uy, uz = ax - s2 * hx, ay + hy, az - s1 * hz
                    ex, ey, ez = 0.0, 2.0 * hy, 0.0
                else:
                    ux, uy, uz = ax - s1 * hx, ay - s2 * hy, az + hz
                    ex, ey, ez = 0.0, 0.0, 2.0 * hz
                alpha = ux * ax + uy * ay + uz * az
                beta = ex * ax + ey * ay + ez * az
                ue = ux * ex + uy * ey + uz * ez
                ee = ex * ex + ey * ey + ez * ez
                den = beta * ue - alpha * ee
                if den == 0.0:
                    continue
                lam = (beta * (ux * ux + uy * uy + uz * uz) - alpha * ue) / den
                if not (0.0 < lam < 1.0):
                    continue
                vx = ux - lam * ex
                vy = uy - lam * ey
                vz = uz - lam * ez
                nv = math.sqrt(vx * vx + vy * vy + vz * vz)
                if nv == 0.0:
                    return math.pi
                cv = (vx * ax + vy * ay + vz * az) / nv
                if cv < cmin:
                    cmin = cv
                    bx = vx
                    by = vy
                    bz = vz
    return _angle(bx, by, bz, ax, ay, az)


@njit(cache=True, nogil=True)
def class_bounds(means, sigma2, phi1, dirs, kappa2, phi2, lz2, zeta,
                 r0s, rot_hw, t0s, trans_hw, need_self,
                 self_lb, self_center, cross_ub, cross_center, psi_t_max, status):
    """Bounds of one class over branches ``[0, len(r0s))``; results written in place.

    Outputs per branch: lower bound of the model self-term, the self-term at
    the centre, upper bound of the cross-term sum (without the factor -2), the
    cross-term at the centre, the largest translation uncertainty angle and a
    status code. Self-term outputs are left untouched where ``need_self`` is
    False; status and ``psi_t_max`` are combined (max) with existing values so
    several classes can share the arrays.
    """
    n1 = means.shape[0]
    n2 = dirs.shape[0]
    M = r0s.shape[0]
    R = np.empty((3, 3))
    u = np.empty((n1, 3))
    ru = np.empty((n1, 3))
    psi = np.empty(n1)
    lo = np.empty(n1)
    hi = np.empty(n1)
    glo = np.empty(n1)
    ghi = np.empty(n1)
    kc = np.empty(n1)
    gc = np.empty(n1)
    wc = np.empty((n1, 3))
    rwc = np.empty((n1, 3))
    cpsi = np.empty(n1)
    spsi = np.empty(n1)
    full = np.empty(n1, dtype=np.bool_)
    beta = np.empty(n1)
    cpt = np.empty(n1)
    spt = np.empty(n1)
    cthr = np.empty(n1)
    k2min = math.inf
    for j in range(n2):
        if kappa2[j] < k2min:
            k2min = kappa2[j]
    have_t = False
    ptx = pty = ptz = phx = phy = phz = 0.0
    t_center_ok = True
    t_infeasible = False
    t_pmax = 0.0
    for m in range(M):
        rodrigues3(r0s[m], R)
        psi_r = min(_SQRT3 * rot_hw[m], math.pi)
        tx, ty, tz = t0s[m, 0], t0s[m, 1], t0s[m, 2]
        hx, hy, hz = trans_hw[m, 0], trans_hw[m, 1], trans_hw[m, 2]
        # translation-only quantities are shared by consecutive rotation siblings
        if not (have_t and tx == ptx and ty == pty and tz == ptz and hx == phx and hy == phy and hz == phz):
            have_t = True
            ptx, pty, ptz, phx, phy, phz = tx, ty, tz, hx, hy, hz
            t_center_ok = True
            t_infeasible = False
            t_pmax = 0.0
            for i in range(n1):
                ax = means[i, 0] - tx
                ay = means[i, 1] - ty
                az = means[i, 2] - tz
                d0 = math.sqrt(ax * ax + ay * ay + az * az)
                if d0 > 0.0:
                    u[i, 0] = ax / d0
                    u[i, 1] = ay / d0
                    u[i, 2] = az / d0
                else:
                    u[i, 0] = 1.0
                    u[i, 1] = 0.0
                    u[i, 2] = 0.0
                if d0 < zeta:
                    t_center_ok = False
                ox = abs(ax)
                oy = abs(ay)
                oz = abs(az)
                if ox <= hx and oy <= hy and oz <= hz:
                    p = math.pi
                else:
                    p = _psi_box(ax, ay, az, hx, hy, hz)
                psi[i] = p
                cpt[i] = math.cos(p)
                spt[i] = math.sin(p)
                if p > t_pmax:
                    t_pmax = p
                ex = max(ox - hx, 0.0)
                ey = max(oy - hy, 0.0)
                ez = max(oz - hz, 0.0)
                dmin = math.sqrt(ex * ex + ey * ey + ez * ez)
                fx = ox + hx
                fy = oy + hy
                fz = oz + hz
                dmax = math.sqrt(fx * fx + fy * fy + fz * fz)
                if dmax < zeta:
                    t_infeasible = True
                if dmin < zeta:
                    dmin = zeta
                if dmax < dmin:
                    dmax = dmin
                lo[i] = dmin * dmin / sigma2[i] + 1.0
                hi[i] = dmax * dmax / sigma2[i] + 1.0
                glo[i] = g_fn(lo[i])
                ghi[i] = g_fn(hi[i])
                kc[i] = d0 * d0 / sigma2[i] + 1.0
                gc[i] = g_fn(kc[i])
                wc[i, 0] = kc[i] * u[i, 0]
                wc[i, 1] = kc[i] * u[i, 1]
                wc[i, 2] = kc[i] * u[i, 2]
                # cross terms are negligible once the alignment angle B exceeds beta[i]:
                # exponent <= -lo k2 (1 - cos B) / (lo + k2), weakest for the smallest k2
                thr = (_LOG2 - ghi[i] - _LOG_CUTOFF) * (1.0 / k2min + 1.0 / lo[i])
                beta[i] = math.pi if thr >= 2.0 else math.acos(1.0 - thr)
        center_ok = t_center_ok
        st = status[m]
        if t_infeasible:
            st = STATUS_INFEASIBLE
        if t_pmax > psi_t_max[m]:
            psi_t_max[m] = t_pmax
        if not center_ok and st == STATUS_OK:
            st = STATUS_CENTER_INFEASIBLE
        status[m] = st
        if st == STATUS_INFEASIBLE:
            continue
        for i in range(n1):
            ru[i, 0] = R[0, 0] * u[i, 0] + R[0, 1] * u[i, 1] + R[0, 2] * u[i, 2]
            ru[i, 1] = R[1, 0] * u[i, 0] + R[1, 1] * u[i, 1] + R[1, 2] * u[i, 2]
            ru[i, 2] = R[2, 0] * u[i, 0] + R[2, 1] * u[i, 1] + R[2, 2] * u[i, 2]
            rwc[i, 0] = kc[i] * ru[i, 0]
            rwc[i, 1] = kc[i] * ru[i, 1]
            rwc[i, 2] = kc[i] * ru[i, 2]
            tot = psi[i] + psi_r
            full[i] = tot >= math.pi
            cpsi[i] = math.cos(tot)
            spsi[i] = math.sin(tot)
            reach = tot + beta[i]
            cthr[i] = -2.0 if reach >= math.pi else math.cos(reach)

        if need_self[m]:
            s_lb = 0.0
            s_c = 0.0
            for i in range(n1):
                # diagonal: log(Z(2k)/Z(k)^2) = log(k/2) + log(coth k) is increasing in k -> minimum at lo
                s_lb += phi1[i] * phi1[i] * math.exp(g_fn(2.0 * lo[i]) - 2.0 * glo[i])
                if center_ok:
                    s_c += phi1[i] * phi1[i] * math.exp(g_fn(2.0 * kc[i]) - 2.0 * gc[i])
                for j in range(i + 1, n1):
                    w2 = 2.0 * phi1[i] * phi1[j]
                    # lower bound: cos A with A >= true angle for every t in the box
                    ps = psi[i] + psi[j]
                    if ps >= math.pi:
                        c = -1.0
                    else:
                        cx = u[i, 1] * u[j, 2] - u[i, 2] * u[j, 1]
                        cy = u[i, 2] * u[j, 0] - u[i, 0] * u[j, 2]
                        cz = u[i, 0] * u[j, 1] - u[i, 1] * u[j, 0]
                        sn = math.sqrt(cx * cx + cy * cy + cz * cz)
                        cs = u[i, 0] * u[j, 0] + u[i, 1] * u[j, 1] + u[i, 2] * u[j, 2]
                        cps = cpt[i] * cpt[j] - spt[i] * spt[j]
                        if cs <= -cps:
                            c = -1.0  # angle + psi_i + psi_j >= pi
                        else:
                            c = cs * cps - sn * (spt[i] * cpt[j] + cpt[i] * spt[j])
                    khh = _kfun(hi[i], hi[j], c)
                    expo = khh - hi[i] - hi[j]
                    if _LOG2 - glo[i] - glo[j] + expo > _LOG_CUTOFF:
                        kmax = khh
                        v = _kfun(lo[i], hi[j], c)
                        if v > kmax:
                            kmax = v
                        v = _kfun(hi[i], lo[j], c)
                        if v > kmax:
                            kmax = v
                        v = _kfun(lo[i], lo[j], c)
                        if v > kmax:
                            kmax = v
                        s_lb += w2 * exp_g_plus(kmax, expo - glo[i] - glo[j])
                    if center_ok:
                        sx = wc[i, 0] + wc[j, 0]
                        sy = wc[i, 1] + wc[j, 1]
                        sz = wc[i, 2] + wc[j, 2]
                        kk = math.sqrt(sx * sx + sy * sy + sz * sz)
                        expo_c = kk - kc[i] - kc[j]
                        if _LOG2 - gc[i] - gc[j] + expo_c > _LOG_CUTOFF:
                            s_c += w2 * exp_g_plus(kk, expo_c - gc[i] - gc[j])
            self_lb[m] = s_lb
            self_center[m] = s_c if center_ok else np.nan

        x_ub = 0.0
        x_c = 0.0
        for j in range(n2):
            k2 = kappa2[j]
            vx, vy, vz = dirs[j, 0], dirs[j, 1], dirs[j, 2]
            for i in range(n1):
                dot = ru[i, 0] * vx + ru[i, 1] * vy + ru[i, 2] * vz
                if dot < cthr[i]:
                    continue
                if dot > 1.0:
                    dot = 1.0
                elif dot < -1.0:
                    dot = -1.0
                # cos B with B = max(0, angle - psi_t - psi_r)
                if full[i] or dot >= cpsi[i]:
                    c = 1.0
                else:
                    c = dot * cpsi[i] + math.sqrt(1.0 - dot * dot) * spsi[i]
                klo = _kfun(lo[i], k2, c)
                expo = klo - lo[i] - lz2[j]
                if _LOG2 - ghi[i] + expo > _LOG_CUTOFF:
                    ks = -c * k2
                    if ks < lo[i]:
                        ks = lo[i]
                    elif ks > hi[i]:
                        ks = hi[i]
                    kmin = _kfun(ks, k2, c)
                    x_ub += phi1[i] * phi2[j] * exp_g_plus(kmin, expo - ghi[i])
                    # the centre term never exceeds the upper-bound term, so it is only needed here
                    if center_ok:
                        sx = rwc[i, 0] + k2 * vx
                        sy = rwc[i, 1] + k2 * vy
                        sz = rwc[i, 2] + k2 * vz
                        kk = math.sqrt(sx * sx + sy * sy + sz * sz)
                        expo_c = kk - kc[i] - lz2[j]
                        if _LOG2 - gc[i] + expo_c > _LOG_CUTOFF:
                            x_c += phi1[i] * phi2[j] * exp_g_plus(kk, expo_c - gc[i])
        cross_ub[m] = x_ub
        cross_center[m] = x_c if center_ok else np.nan
