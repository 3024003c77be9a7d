"""Compiled MNA assembly, Newton iteration and fixed-step integration.

Everything here works on a handful of packed arrays so numba can compile
it; the Python-facing API lives in :mod:`neuroage.solver`.

Nodes pinned by a grounded voltage source are eliminated: their voltages
are set once per time point, and only the remaining nodes plus the branch
currents of floating voltage sources are Newton unknowns.

Packed layout (see ``solver.compile_netlist``):

``topo``   int64 rows ``[kind, a, b, c]`` per element, where kind is
           0 mosfet (drain, gate, source), 1 capacitor, 2 resistor,
           3 current source (n+, n-), 4 floating voltage source
           (n+, n-, branch unknown).
``par``    float64 rows of 6 per element: mosfet ``[sign, vth, ispec,
           n, lambda, u_t]``, capacitor ``[C]``, resistor ``[G]``,
           current source ``[I]``, voltage source ``[source index]``.
``nodes``  int64 rows ``[unknown index or -1, source index or -1]``.
"""

import math

import numba
import numpy as np

# --- EKV core -------------------------------------------------------------

@numba.njit(cache=True, inline="always")
def _softplus(u):
    if u > 0.0:
        return u + math.log1p(math.exp(-u))
    return math.log1p(math.exp(u))


@numba.njit(cache=True, inline="always")
def _sigmoid(u):
    if u >= 0.0:
        return 1.0 / (1.0 + math.exp(-u))
    e = math.exp(u)
    return e / (1.0 + e)


@numba.njit(cache=True)
def ekv_core(sign, vth, ispec, n, lam, ut, vg, vd, vs):
    """Drain current and partials (dI/dVg, dI/dVd, dI/dVs).

    ``sign`` is +1 for NMOS and -1 for PMOS, ``vth`` the mirrored-frame
    threshold. Voltages are referenced to the source terminal. The returned
    current flows into the drain terminal.
    """
    vgs = sign * (vg - vs)
    vds = sign * (vd - vs)
    vp = (vgs - vth) / n
    inv2ut = 0.5 / ut
    uf = vp * inv2ut
    ur = (vp - vds) * inv2ut
    lf = _softplus(uf)
    lr = _softplus(ur)
    # dF/dx = 2 ln(1+e^u) sigma(u) / (2 ut)
    dff = lf * _sigmoid(uf) / ut
    dfr = lr * _sigmoid(ur) / ut
    clm = 1.0 + lam * abs(vds)
    dclm = lam if vds > 0.0 else (-lam if vds < 0.0 else 0.0)
    core = lf * lf - lr * lr
    di_dg = ispec * (dff - dfr) / n * clm
    di_dd = ispec * (dfr * clm + core * dclm)
    # mirroring flips the current and all voltages, so the partials keep their sign
    return sign * ispec * core * clm, di_dg, di_dd, -(di_dg + di_dd)

BE = 0
TRAP = 1

OK = 0
FAIL_NEWTON = 1
FAIL_SINGULAR = 2

K_MOS = 0
K_CAP = 1
K_RES = 2
K_ISRC = 3
K_VSRC = 4


@numba.njit(cache=True)
def source_value(k, t, vt, vv, voff, vlen):
    o = voff[k]
    m = vlen[k]
    if m == 1 or t <= vt[o]:
        return vv[o]
    if t >= vt[o + m - 1]:
        return vv[o + m - 1]
    for j in range(o, o + m - 1):
        if t <= vt[j + 1]:
            a = (t - vt[j]) / (vt[j + 1] - vt[j])
            return vv[j] + a * (vv[j + 1] - vv[j])
    return vv[o + m - 1]


@numba.njit(cache=True)
def set_time(nodes, nsign, vt, vv, voff, vlen, t, scale, vfull, vnow):
    """Evaluate every voltage source at ``t`` and pin the eliminated nodes."""
    for k in range(voff.shape[0]):
        vnow[k] = scale * source_value(k, t, vt, vv, voff, vlen)
    for i in range(nodes.shape[0]):
        s = nodes[i, 1]
        if s >= 0:
            vfull[i] = nsign[i] * vnow[s]
        elif nodes[i, 0] < 0:
            vfull[i] = 0.0


@numba.njit(cache=True)
def assemble(topo, par, nodes, gmin, vfull, x, scale, dc, geq, ihist, vnow, F, J):
    """Residual F (currents leaving each free node; branch voltage errors) and Jacobian J."""
    n = F.shape[0]
    for i in range(nodes.shape[0]):
        u = nodes[i, 0]
        if u >= 0:
            vfull[i] = x[u]
    for i in range(n):
        F[i] = 0.0
        for j in range(n):
            J[i, j] = 0.0
    for i in range(nodes.shape[0]):
        u = nodes[i, 0]
        if u >= 0:
            F[u] += gmin * vfull[i]
            J[u, u] += gmin
    cap = 0
    for e in range(topo.shape[0]):
        kind = topo[e, 0]
        a = topo[e, 1]
        b = topo[e, 2]
        ua = nodes[a, 0]
        ub = nodes[b, 0]
        if kind == K_MOS:
            c = topo[e, 3]
            i_d, dg, dd, ds = ekv_core(par[e, 0], par[e, 1], par[e, 2], par[e, 3], par[e, 4],
                                       par[e, 5], vfull[b], vfull[a], vfull[c])
            uc = nodes[c, 0]
            # a = drain, b = gate, c = source
            if ua >= 0:
                F[ua] += i_d
                J[ua, ua] += dd
                if ub >= 0:
                    J[ua, ub] += dg
                if uc >= 0:
                    J[ua, uc] += ds
            if uc >= 0:
                F[uc] -= i_d
                J[uc, uc] -= ds
                if ua >= 0:
                    J[uc, ua] -= dd
                if ub >= 0:
                    J[uc, ub] -= dg
        elif kind == K_CAP or kind == K_RES:
            if kind == K_CAP:
                if dc:
                    cap += 1
                    continue
                g = geq[cap]
                cur = g * (vfull[a] - vfull[b]) + ihist[cap]
                cap += 1
            else:
                g = par[e, 0]
                cur = g * (vfull[a] - vfull[b])
            if ua >= 0:
                F[ua] += cur
                J[ua, ua] += g
                if ub >= 0:
                    J[ua, ub] -= g
            if ub >= 0:
                F[ub] -= cur
                J[ub, ub] += g
                if ua >= 0:
                    J[ub, ua] -= g
        elif kind == K_ISRC:
            # SPICE sense: current leaves n+ into the source and re-enters at n-
            cur = scale * par[e, 0]
            if ua >= 0:
                F[ua] += cur
            if ub >= 0:
                F[ub] -= cur
        else:
            br = topo[e, 3]
            jcur = x[br]
            if ua >= 0:
                F[ua] += jcur
                J[ua, br] += 1.0
                J[br, ua] += 1.0
            if ub >= 0:
                F[ub] -= jcur
                J[ub, br] -= 1.0
                J[br, ub] -= 1.0
            F[br] = vfull[a] - vfull[b] - vnow[int(par[e, 0])]


@numba.njit(cache=True)
def lu_solve(A, b, out):
    """Dense Gaussian elimination with partial pivoting; A and b are destroyed."""
    n = b.shape[0]
    for c in range(n):
        p = c
        best = abs(A[c, c])
        for r in range(c + 1, n):
            v = abs(A[r, c])
            if v > best:
                best = v
                p = r
        if best < 1e-300:
            return False
        if p != c:
            for j in range(c, n):
                tmp = A[c, j]
                A[c, j] = A[p, j]
                A[p, j] = tmp
            tmp = b[c]
            b[c] = b[p]
            b[p] = tmp
        inv = 1.0 / A[c, c]
        for r in range(c + 1, n):
            f = A[r, c] * inv
            if f != 0.0:
                for j in range(c + 1, n):
                    A[r, j] -= f * A[c, j]
                b[r] -= f * b[c]
    for r in range(n - 1, -1, -1):
        acc = b[r]
        for j in range(r + 1, n):
            acc -= A[r, j] * out[j]
        out[r] = acc / A[r, r]
    return True


@numba.njit(cache=True)
def newton(topo, par, nodes, gmin, n_free, x, scale, dc, geq, ihist, vnow, vfull,
           F, J, dx, abstol, reltol, itol, maxit, vlimit):
    """Solve in place at the time point already loaded by ``set_time``.

    Converged means the last update satisfied |dV| < abstol + reltol*|V| on
    every node and every free-node KCL residual is below ``itol``.
    Returns (status, iterations, max node residual).
    """
    n = x.shape[0]
    dx_ok = False
    worst = 0.0
    for it in range(maxit + 1):
        assemble(topo, par, nodes, gmin, vfull, x, scale, dc, geq, ihist, vnow, F, J)
        worst = 0.0
        ok = True
        for i in range(n):
            r = abs(F[i])
            if i < n_free:
                if r > worst:
                    worst = r
                if r >= itol:
                    ok = False
            elif r >= abstol:
                ok = False
        if dx_ok and ok:
            return OK, it, worst
        if it == maxit:
            break
        for i in range(n):
            F[i] = -F[i]
        if not lu_solve(J, F, dx):
            return FAIL_SINGULAR, it, worst
        dx_ok = True
        for i in range(n):
            step = dx[i]
            if not math.isfinite(step):
                return FAIL_NEWTON, it, worst
            if i < n_free:
                if step > vlimit:
                    step = vlimit
                elif step < -vlimit:
                    step = -vlimit
                if abs(step) > abstol + reltol * abs(x[i]):
                    dx_ok = False
            elif abs(step) > 1e-12 + reltol * abs(x[i]):
                dx_ok = False
            x[i] += step
    return FAIL_NEWTON, maxit, worst


@numba.njit(cache=True)
def _cap_setup(capc, h, method, cap_v, cap_i, geq, ihist):
    for k in range(capc.shape[0]):
        if method == TRAP:
            geq[k] = 2.0 * capc[k] / h
            ihist[k] = -geq[k] * cap_v[k] - cap_i[k]
        else:
            geq[k] = capc[k] / h
            ihist[k] = -geq[k] * cap_v[k]


@numba.njit(cache=True)
def _cap_update(capn, vfull, geq, ihist, cap_v, cap_i):
    for k in range(capn.shape[0]):
        v = vfull[capn[k, 0]] - vfull[capn[k, 1]]
        cap_i[k] = geq[k] * v + ihist[k]
        cap_v[k] = v


@numba.njit(cache=True)
def run_steps(topo, par, nodes, nsign, gmin, n_free, vt, vv, voff, vlen, capn, capc,
              x, t0, dt, nsteps, method, first_be, cap_v, cap_i,
              abstol, reltol, itol, maxit, vlimit, max_split, dv_max, dv_levels, out_v, stats):
    """Advance ``nsteps`` fixed steps, writing node voltages to ``out_v[k]``.

    If Newton fails on a step, the step is retried as 2, 4, ... equal
    sub-steps (up to ``2**max_split``); only the end point is recorded.
    With ``dv_max > 0`` a step whose capacitor voltages move by more than
    ``dv_max`` per sub-step is also redone with enough sub-steps to bring
    the move under ``dv_max``, using at most ``2**dv_levels`` of them.
    ``stats`` accumulates [newton_iters, steps, max_residual, split_steps].
    Returns (status, steps_done, failed_time).
    """
    n = x.shape[0]
    ncap = cap_v.shape[0]
    nn = nodes.shape[0]
    vfull = np.zeros(nn)
    vnow = np.zeros(voff.shape[0])
    F = np.zeros(n)
    J = np.zeros((n, n))
    dx = np.zeros(n)
    geq = np.zeros(ncap)
    ihist = np.zeros(ncap)
    x_save = np.zeros(n)
    cv_save = np.zeros(ncap)
    ci_save = np.zeros(ncap)
    t = t0
    use_be = first_be
    for k in range(nsteps):
        x_save[:] = x
        cv_save[:] = cap_v
        ci_save[:] = cap_i
        done = False
        level = 0
        while level <= max_split:
            parts = 1 << level
            h = dt / parts
            good = True
            step_worst = 0.0
            its_total = 0
            move = 0.0
            for p in range(parts):
                tn = t + h * (p + 1) if p + 1 < parts else t0 + dt * (k + 1)
                m = BE if use_be else method
                _cap_setup(capc, h, m, cap_v, cap_i, geq, ihist)
                set_time(nodes, nsign, vt, vv, voff, vlen, tn, 1.0, vfull, vnow)
                status, its, worst = newton(topo, par, nodes, gmin, n_free, x, 1.0, False,
                                            geq, ihist, vnow, vfull, F, J, dx,
                                            abstol, reltol, itol, maxit, vlimit)
                its_total += its
                if status != OK:
                    good = False
                    break
                if worst > step_worst:
                    step_worst = worst
                if dv_max > 0.0 and level < dv_levels:
                    for q in range(ncap):
                        d = abs(vfull[capn[q, 0]] - vfull[capn[q, 1]] - cap_v[q])
                        if d > move:
                            move = d
                _cap_update(capn, vfull, geq, ihist, cap_v, cap_i)
            stats[0] += its_total
            nxt = level + 1
            if good and move > dv_max and dv_max > 0.0 and level < dv_levels:
                good = False
                nxt = min(dv_levels, level + int(math.ceil(math.log2(move / dv_max))))
            if good:
                done = True
                if level > 0:
                    stats[3] += 1
                if step_worst > stats[2]:
                    stats[2] = step_worst
                break
            x[:] = x_save
            cap_v[:] = cv_save
            cap_i[:] = ci_save
            level = max(nxt, level + 1)
        if not done:
            return FAIL_NEWTON, k, t0 + dt * (k + 1)
        use_be = False
        t = t0 + dt * (k + 1)
        for i in range(nn):
            out_v[k, i] = vfull[i]
        stats[1] += 1
    return OK, nsteps, t


@numba.njit(cache=True)
def residual_at(topo, par, nodes, nsign, gmin, vt, vv, voff, vlen, x, t, dc, geq, ihist):
    n = x.shape[0]
    vfull = np.zeros(nodes.shape[0])
    vnow = np.zeros(voff.shape[0])
    F = np.zeros(n)
    J = np.zeros((n, n))
    set_time(nodes, nsign, vt, vv, voff, vlen, t, 1.0, vfull, vnow)
    assemble(topo, par, nodes, gmin, vfull, x, 1.0, dc, geq, ihist, vnow, F, J)
    return F


@numba.njit(cache=True)
def dc_solve(topo, par, nodes, nsign, gmin, n_free, vt, vv, voff, vlen, x, t, scale,
             abstol, reltol, itol, maxit, vlimit):
    n = x.shape[0]
    vfull = np.zeros(nodes.shape[0])
    vnow = np.zeros(voff.shape[0])
    F = np.zeros(n)
    J = np.zeros((n, n))
    dx = np.zeros(n)
    geq = np.zeros(0)
    ihist = np.zeros(0)
    set_time(nodes, nsign, vt, vv, voff, vlen, t, scale, vfull, vnow)
    status, its, worst = newton(topo, par, nodes, gmin, n_free, x, scale, True, geq, ihist,
                                vnow, vfull, F, J, dx, abstol, reltol, itol, maxit, vlimit)
    R = np.zeros(n)
    if status != OK:
        assemble(topo, par, nodes, gmin, vfull, x, scale, True, geq, ihist, vnow, R, J)
    return status, its, worst, R
