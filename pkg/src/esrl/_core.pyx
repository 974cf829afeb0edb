# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled episode kernels: policy evaluation and closed-loop stepping.

Same API as the pure NumPy module ``esrl._core_py``; see there for the
documented semantics.  The inner loops run without the GIL so independent
episodes can be evaluated from worker threads.
"""

import numpy as np

from libc.math cimport tanh, log, isfinite, fabs, cos, sin

BACKEND_NAME = "compiled"

_DUMMY1 = np.zeros(1)
_DUMMY2 = np.zeros((1, 1))


def _flatten_mats(mats):
    flats, offs, pos = [], [], 0
    for m in mats:
        m = np.ascontiguousarray(m, dtype=np.float64)
        offs.append(pos)
        flats.append(m.ravel())
        pos += m.size
    return np.concatenate(flats), np.array(offs, dtype=np.int32)


cdef class PackedPolicy:
    """Flattened policy tables plus per-instance scratch buffers.

    Instances are not safe to share between threads (the scratch is reused);
    pack one policy per concurrent task.
    """

    cdef public int n
    cdef public double srelu_d, eps_diag
    cdef double[::1] eta_eff, goal
    # convex net: k affine layers; wx[i] is (sizes[i+1], n), wz[i] is
    # (sizes[i+2], sizes[i+1]); all stored flat with offsets
    cdef int icnn_k
    cdef int[::1] icnn_sizes, wx_off, wz_off
    cdef double[::1] wx_flat, wz_flat
    # damping nets, same flat storage
    cdef int diag_k, off_k
    cdef int[::1] diag_sizes, off_sizes, dw_off, db_off, ow_off, ob_off
    cdef double[::1] dw_flat, db_flat, ow_flat, ob_flat
    # scratch
    cdef double[::1] pre, zbuf, z2buf, delta, delta2, grad, xrel
    cdef double[::1] h1, h2, diag_out, off_out, Lbuf, dvbuf, wbuf

    def __init__(self, eta_eff, goal, srelu_d, eps_diag,
                 icnn_wx, icnn_wz, diag_w, diag_b, off_w, off_b):
        self.eta_eff = np.ascontiguousarray(eta_eff, dtype=np.float64)
        self.goal = np.ascontiguousarray(goal, dtype=np.float64)
        self.n = self.goal.shape[0]
        self.srelu_d = float(srelu_d)
        self.eps_diag = float(eps_diag)

        sizes = [np.asarray(icnn_wx[0]).shape[1]] \
            + [np.asarray(m).shape[0] for m in icnn_wx]
        self.icnn_k = len(icnn_wx)
        self.icnn_sizes = np.array(sizes, dtype=np.int32)
        self.wx_flat, self.wx_off = _flatten_mats(icnn_wx)
        if icnn_wz:
            self.wz_flat, self.wz_off = _flatten_mats(icnn_wz)
        else:
            self.wz_flat = np.zeros(0)
            self.wz_off = np.zeros(0, dtype=np.int32)

        dsizes = [np.asarray(diag_w[0]).shape[1]] \
            + [np.asarray(m).shape[0] for m in diag_w]
        osizes = [np.asarray(off_w[0]).shape[1]] \
            + [np.asarray(m).shape[0] for m in off_w]
        self.diag_k = len(diag_w)
        self.off_k = len(off_w)
        self.diag_sizes = np.array(dsizes, dtype=np.int32)
        self.off_sizes = np.array(osizes, dtype=np.int32)
        self.dw_flat, self.dw_off = _flatten_mats(diag_w)
        self.db_flat, self.db_off = _flatten_mats(
            [np.asarray(b).reshape(-1, 1) for b in diag_b])
        self.ow_flat, self.ow_off = _flatten_mats(off_w)
        self.ob_flat, self.ob_off = _flatten_mats(
            [np.asarray(b).reshape(-1, 1) for b in off_b])

        wmax = max(max(sizes), max(dsizes), max(osizes))
        self.pre = np.zeros(sum(sizes[1:]))
        self.zbuf = np.zeros(wmax)
        self.z2buf = np.zeros(wmax)
        self.delta = np.zeros(wmax)
        self.delta2 = np.zeros(wmax)
        self.grad = np.zeros(self.n)
        self.xrel = np.zeros(self.n)
        self.h1 = np.zeros(wmax)
        self.h2 = np.zeros(wmax)
        self.diag_out = np.zeros(self.n)
        self.off_out = np.zeros(max(1, self.n * (self.n - 1) // 2))
        self.Lbuf = np.zeros(self.n * self.n)
        self.dvbuf = np.zeros(self.n)
        self.wbuf = np.zeros(self.n)

    cdef inline double c_srelu(self, double x) nogil:
        if x <= 0.0:
            return 0.0
        if x < self.srelu_d:
            return x * x / (2.0 * self.srelu_d)
        return x - 0.5 * self.srelu_d

    cdef inline double c_srelu_grad(self, double x) nogil:
        if x <= 0.0:
            return 0.0
        if x < self.srelu_d:
            return x / self.srelu_d
        return 1.0

    cdef double c_potential(self, double* xrel, double* grad) nogil:
        """Value of the combined potential at xrel; gradient into ``grad``."""
        cdef int n = self.n, k = self.icnn_k
        cdef int i, j, r, rows, cols, off, poff
        cdef double acc, value
        cdef double* pre = &self.pre[0]
        cdef double* z = &self.zbuf[0]
        cdef double* z2 = &self.z2buf[0]
        cdef double* d1 = &self.delta[0]
        cdef double* d2 = &self.delta2[0]

        # forward, storing preactivations
        poff = 0
        rows = self.icnn_sizes[1]
        off = self.wx_off[0]
        for r in range(rows):
            acc = 0.0
            for j in range(n):
                acc += self.wx_flat[off + r * n + j] * xrel[j]
            pre[poff + r] = acc
            z[r] = self.c_srelu(acc)
        poff += rows
        for i in range(1, k):
            rows = self.icnn_sizes[i + 1]
            cols = self.icnn_sizes[i]
            off = self.wz_off[i - 1]
            for r in range(rows):
                acc = 0.0
                for j in range(cols):
                    acc += self.wz_flat[off + r * cols + j] * z[j]
                z2[r] = acc
            off = self.wx_off[i]
            for r in range(rows):
                acc = z2[r]
                for j in range(n):
                    acc += self.wx_flat[off + r * n + j] * xrel[j]
                pre[poff + r] = acc
            for r in range(rows):
                z[r] = self.c_srelu(pre[poff + r])
            poff += rows
        value = z[0]

        # reverse sweep for the input gradient
        for j in range(n):
            grad[j] = 0.0
        poff -= self.icnn_sizes[k]
        rows = self.icnn_sizes[k]
        for r in range(rows):
            d1[r] = self.c_srelu_grad(pre[poff + r])
        off = self.wx_off[k - 1]
        for r in range(rows):
            for j in range(n):
                grad[j] += self.wx_flat[off + r * n + j] * d1[r]
        for i in range(k - 1, 0, -1):
            rows = self.icnn_sizes[i + 1]
            cols = self.icnn_sizes[i]
            poff -= cols
            off = self.wz_off[i - 1]
            for j in range(cols):
                acc = 0.0
                for r in range(rows):
                    acc += self.wz_flat[off + r * cols + j] * d1[r]
                d2[j] = acc * self.c_srelu_grad(pre[poff + j])
            off = self.wx_off[i - 1]
            for r in range(cols):
                for j in range(n):
                    grad[j] += self.wx_flat[off + r * n + j] * d2[r]
            for r in range(cols):
                d1[r] = d2[r]

        # quadratic part
        for j in range(n):
            value += 0.5 * self.eta_eff[j] * xrel[j] * xrel[j]
            grad[j] += self.eta_eff[j] * xrel[j]
        return value

    cdef void c_fcnn(self, double[::1] wf, int[::1] woff, double[::1] bf,
                     int[::1] boff, int[::1] sizes, int k,
                     double* v, double* out) nogil:
        cdef int i, r, j, rows, cols, wo, bo
        cdef double acc
        cdef double* h = &self.h1[0]
        cdef double* h2 = &self.h2[0]
        cdef double* tmp
        for j in range(sizes[0]):
            h[j] = v[j]
        for i in range(k):
            rows = sizes[i + 1]
            cols = sizes[i]
            wo = woff[i]
            bo = boff[i]
            for r in range(rows):
                acc = bf[bo + r]
                for j in range(cols):
                    acc += wf[wo + r * cols + j] * h[j]
                h2[r] = tanh(acc) if i < k - 1 else acc
            tmp = h
            h = h2
            h2 = tmp
        for r in range(sizes[k]):
            out[r] = h[r]

    cdef void c_damping_L(self, double* v, double* L) nogil:
        """Lower-triangular factor, row-major into L (n*n)."""
        cdef int n = self.n
        cdef int i, j, k
        self.c_fcnn(self.dw_flat, self.dw_off, self.db_flat, self.db_off,
                    self.diag_sizes, self.diag_k, v, &self.diag_out[0])
        self.c_fcnn(self.ow_flat, self.ow_off, self.ob_flat, self.ob_off,
                    self.off_sizes, self.off_k, v, &self.off_out[0])
        for i in range(n * n):
            L[i] = 0.0
        for i in range(n):
            L[i * n + i] = (self.diag_out[i] if self.diag_out[i] > 0.0 else 0.0) \
                + self.eps_diag
        k = 0
        for i in range(n):
            for j in range(i):
                L[i * n + j] = self.off_out[k]
                k += 1

    cdef void c_damping_times(self, double* L, double* v, double* out) nogil:
        """out = (L L^T) v."""
        cdef int n = self.n
        cdef int i, j
        cdef double acc
        for j in range(n):
            acc = 0.0
            for i in range(j, n):
                acc += L[i * n + j] * v[i]
            self.wbuf[j] = acc
        for i in range(n):
            acc = 0.0
            for j in range(i + 1):
                acc += L[i * n + j] * self.wbuf[j]
            out[i] = acc

    cdef double c_action(self, double* x, double* v, double* u) nogil:
        """u = -grad P(x - goal) - D(v) v; returns the potential value."""
        cdef int j, n = self.n
        cdef double val
        for j in range(n):
            self.xrel[j] = x[j] - self.goal[j]
        val = self.c_potential(&self.xrel[0], &self.grad[0])
        self.c_damping_L(v, &self.Lbuf[0])
        self.c_damping_times(&self.Lbuf[0], v, &self.dvbuf[0])
        for j in range(n):
            u[j] = -self.grad[j] - self.dvbuf[j]
        return val


# -- contact helpers ----------------------------------------------------------

cdef void c_contact(double[:, ::1] wb, int nw, double* x, double* v,
                    double half, double stiff, double cdamp, double mu,
                    double* f) nogil:
    cdef int w, axis, tang
    cdef double ox, oy, delta, sign, fn, vt, mag, cap
    f[0] = 0.0
    f[1] = 0.0
    for w in range(nw):
        ox = (x[0] + half if x[0] + half < wb[w, 1] else wb[w, 1]) \
            - (x[0] - half if x[0] - half > wb[w, 0] else wb[w, 0])
        oy = (x[1] + half if x[1] + half < wb[w, 3] else wb[w, 3]) \
            - (x[1] - half if x[1] - half > wb[w, 2] else wb[w, 2])
        if ox <= 0.0 or oy <= 0.0:
            continue
        if ox <= oy:
            axis = 0
            delta = ox
            sign = 1.0 if x[0] >= 0.5 * (wb[w, 0] + wb[w, 1]) else -1.0
        else:
            axis = 1
            delta = oy
            sign = 1.0 if x[1] >= 0.5 * (wb[w, 2] + wb[w, 3]) else -1.0
        fn = stiff * delta - cdamp * sign * v[axis]
        if fn < 0.0:
            fn = 0.0
        tang = 1 - axis
        vt = v[tang]
        cap = mu * fn
        mag = cdamp * fabs(vt)
        if mag > cap:
            mag = cap
        f[axis] += sign * fn
        if vt > 0.0:
            f[tang] -= mag
        elif vt < 0.0:
            f[tang] += mag


cdef double c_spring(double[:, ::1] wb, int nw, double* x, double half,
                     double stiff) nogil:
    cdef int w
    cdef double ox, oy, d, e = 0.0
    for w in range(nw):
        ox = (x[0] + half if x[0] + half < wb[w, 1] else wb[w, 1]) \
            - (x[0] - half if x[0] - half > wb[w, 0] else wb[w, 0])
        oy = (x[1] + half if x[1] + half < wb[w, 3] else wb[w, 3]) \
            - (x[1] - half if x[1] - half > wb[w, 2] else wb[w, 2])
        if ox > 0.0 and oy > 0.0:
            d = ox if ox < oy else oy
            e += 0.5 * stiff * d * d
    return e


cdef double point_lyap(PackedPolicy pp, double* x, double* v, double mass) nogil:
    cdef double val
    cdef int j
    for j in range(pp.n):
        pp.xrel[j] = x[j] - pp.goal[j]
    val = pp.c_potential(&pp.xrel[0], &pp.grad[0])
    for j in range(pp.n):
        val += 0.5 * mass * v[j] * v[j]
    return val


cdef double arm_lyap(PackedPolicy pp, double* q, double* qd,
                     double m1, double m2, double l1, double l2,
                     double i1, double i2) nogil:
    cdef double val, c2, m11, m12, m22
    cdef double r1 = 0.5 * l1, r2 = 0.5 * l2
    cdef int j
    for j in range(pp.n):
        pp.xrel[j] = q[j] - pp.goal[j]
    val = pp.c_potential(&pp.xrel[0], &pp.grad[0])
    c2 = cos(q[1])
    m11 = i1 + i2 + m1 * r1 * r1 + m2 * (l1 * l1 + r2 * r2 + 2.0 * l1 * r2 * c2)
    m12 = i2 + m2 * (r2 * r2 + l1 * r2 * c2)
    m22 = i2 + m2 * r2 * r2
    val += 0.5 * (m11 * qd[0] * qd[0] + 2.0 * m12 * qd[0] * qd[1]
                  + m22 * qd[1] * qd[1])
    return val


# -- python-visible wrappers (tests, cross-backend checks) --------------------

def potential_value_grad(PackedPolicy pp, xrel):
    cdef double[::1] xr = np.ascontiguousarray(xrel, dtype=np.float64)
    grad = np.zeros(pp.n)
    cdef double[::1] g = grad
    cdef double val = pp.c_potential(&xr[0], &g[0])
    return val, grad


def damping_factor(PackedPolicy pp, v):
    cdef double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    L = np.zeros(pp.n * pp.n)
    cdef double[::1] lv = L
    pp.c_damping_L(&vv[0], &lv[0])
    return L.reshape(pp.n, pp.n)


def damping_matrix(PackedPolicy pp, v):
    L = damping_factor(pp, v)
    return L @ L.T


def policy_action(PackedPolicy pp, x, v):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    u = np.zeros(pp.n)
    cdef double[::1] uv = u
    pp.c_action(&xv[0], &vv[0], &uv[0])
    return u


# -- episode kernels -----------------------------------------------------------

def run_block2d(PackedPolicy pp, env, walls, reward_p, task_goal, x0, v0,
                int T, record=None):
    if pp.n != 2:
        raise ValueError("block kernel requires a 2-D policy")
    cdef double[::1] ep = np.ascontiguousarray(env, dtype=np.float64)
    walls = np.asarray(walls, dtype=np.float64)
    if walls.size == 0:
        walls = np.zeros((0, 4))
    cdef double[:, ::1] wb = np.ascontiguousarray(walls)
    cdef double[::1] rp = np.ascontiguousarray(reward_p, dtype=np.float64)
    cdef double[::1] tg = np.ascontiguousarray(task_goal, dtype=np.float64)

    rec = record or {}
    cdef bint want_traj = "x" in rec
    cdef bint want_u = "u" in rec
    cdef bint want_r = "r" in rec
    cdef bint want_lyap = "lyap" in rec
    cdef bint want_diss = "diss" in rec
    cdef bint want_pow = "ext_power" in rec
    cdef bint want_spring = "spring" in rec
    cdef int nsub = <int> ep[5]
    if (want_lyap or want_diss or want_pow) and nsub != 1:
        raise ValueError("energy recording requires n_substeps == 1")

    cdef double[:, ::1] rx = rec["x"] if want_traj else _DUMMY2
    cdef double[:, ::1] rv = rec["v"] if want_traj else _DUMMY2
    cdef double[:, ::1] ru = rec["u"] if want_u else _DUMMY2
    cdef double[::1] rr = rec["r"] if want_r else _DUMMY1
    cdef double[::1] rl = rec["lyap"] if want_lyap else _DUMMY1
    cdef double[::1] rd = rec["diss"] if want_diss else _DUMMY1
    cdef double[::1] rpw = rec["ext_power"] if want_pow else _DUMMY1
    cdef double[::1] rs = rec["spring"] if want_spring else _DUMMY1

    cdef double mass = ep[0], stiff = ep[1], cdamp = ep[2], mu = ep[3]
    cdef double dt = ep[4], half = ep[6]
    cdef double slot_x = ep[7], surf_y = ep[8]
    cdef double succ_depth = ep[10], lat_tol = ep[11]
    cdef double h = dt / nsub
    cdef int nw = wb.shape[0]

    cdef double x[2]
    cdef double v[2]
    cdef double vold[2]
    cdef double u[2]
    cdef double fc[2]
    cdef double rwd, d2, diss
    cdef int t, s, j, succ = 0, fault = 0, steps = 0
    x[0] = x0[0]
    x[1] = x0[1]
    v[0] = v0[0]
    v[1] = v0[1]
    fc[0] = 0.0
    fc[1] = 0.0

    cdef double total = 0.0
    with nogil:
        if want_traj:
            rx[0, 0] = x[0]; rx[0, 1] = x[1]
            rv[0, 0] = v[0]; rv[0, 1] = v[1]
        if want_lyap:
            rl[0] = point_lyap(pp, x, v, mass)
        if want_spring:
            rs[0] = c_spring(wb, nw, x, half, stiff)
        for t in range(T):
            pp.c_action(x, v, u)
            vold[0] = v[0]
            vold[1] = v[1]
            for s in range(nsub):
                c_contact(wb, nw, x, v, half, stiff, cdamp, mu, fc)
                v[0] += (h / mass) * (u[0] + fc[0])
                v[1] += (h / mass) * (u[1] + fc[1])
                x[0] += h * v[0]
                x[1] += h * v[1]
            if not (isfinite(x[0]) and isfinite(x[1]) and isfinite(v[0])
                    and isfinite(v[1])):
                fault = 1
                break
            steps = t + 1
            d2 = (x[0] - tg[0]) ** 2 + (x[1] - tg[1]) ** 2
            rwd = -(rp[0] * d2 + rp[1] * log(d2 + rp[2]))
            total += rwd
            if surf_y - (x[1] - half) >= succ_depth and fabs(x[0] - slot_x) <= lat_tol:
                succ = 1
            if want_traj:
                rx[t + 1, 0] = x[0]; rx[t + 1, 1] = x[1]
                rv[t + 1, 0] = v[0]; rv[t + 1, 1] = v[1]
            if want_u:
                ru[t, 0] = u[0]; ru[t, 1] = u[1]
            if want_r:
                rr[t] = rwd
            if want_lyap:
                rl[t + 1] = point_lyap(pp, x, v, mass)
            if want_diss:
                diss = 0.0
                for j in range(2):
                    diss += 0.5 * (vold[j] + v[j]) * pp.dvbuf[j]
                rd[t] = diss
            if want_pow:
                rpw[t] = 0.5 * (fc[0] * (vold[0] + v[0]) + fc[1] * (vold[1] + v[1]))
            if want_spring:
                rs[t + 1] = c_spring(wb, nw, x, half, stiff)
    return total, succ, steps, fault


def run_arm2(PackedPolicy pp, env, x0, v0, int T, record=None):
    if pp.n != 2:
        raise ValueError("arm kernel requires a 2-D policy")
    cdef double[::1] ep = np.ascontiguousarray(env, dtype=np.float64)
    rec = record or {}
    cdef bint want_traj = "x" in rec
    cdef bint want_u = "u" in rec
    cdef bint want_lyap = "lyap" in rec
    cdef bint want_diss = "diss" in rec
    cdef int nsub = <int> ep[8]
    if (want_lyap or want_diss) and nsub != 1:
        raise ValueError("energy recording requires n_substeps == 1")

    cdef double[:, ::1] rx = rec["x"] if want_traj else _DUMMY2
    cdef double[:, ::1] rv = rec["v"] if want_traj else _DUMMY2
    cdef double[:, ::1] ru = rec["u"] if want_u else _DUMMY2
    cdef double[::1] rl = rec["lyap"] if want_lyap else _DUMMY1
    cdef double[::1] rd = rec["diss"] if want_diss else _DUMMY1

    cdef double m1 = ep[0], m2 = ep[1], l1 = ep[2], l2 = ep[3]
    cdef double i1 = ep[4], i2 = ep[5], bv = ep[6], dt = ep[7]
    cdef double r1 = 0.5 * l1, r2 = 0.5 * l2
    cdef double h = dt / nsub

    cdef double q[2]
    cdef double qd[2]
    cdef double qdold[2]
    cdef double u[2]
    cdef double c2, s2, m11, m12, m22, hc, rhs0, rhs1, det, a0, a1, diss
    cdef int t, s, j, fault = 0, steps = 0
    q[0] = x0[0]
    q[1] = x0[1]
    qd[0] = v0[0]
    qd[1] = v0[1]

    with nogil:
        if want_traj:
            rx[0, 0] = q[0]; rx[0, 1] = q[1]
            rv[0, 0] = qd[0]; rv[0, 1] = qd[1]
        if want_lyap:
            rl[0] = arm_lyap(pp, q, qd, m1, m2, l1, l2, i1, i2)
        for t in range(T):
            pp.c_action(q, qd, u)
            qdold[0] = qd[0]
            qdold[1] = qd[1]
            for s in range(nsub):
                c2 = cos(q[1])
                s2 = sin(q[1])
                m11 = i1 + i2 + m1 * r1 * r1 \
                    + m2 * (l1 * l1 + r2 * r2 + 2.0 * l1 * r2 * c2)
                m12 = i2 + m2 * (r2 * r2 + l1 * r2 * c2)
                m22 = i2 + m2 * r2 * r2
                hc = m2 * l1 * r2 * s2
                rhs0 = u[0] + hc * qd[1] * qd[0] + hc * (qd[0] + qd[1]) * qd[1] \
                    - bv * qd[0]
                rhs1 = u[1] - hc * qd[0] * qd[0] - bv * qd[1]
                det = m11 * m22 - m12 * m12
                a0 = (m22 * rhs0 - m12 * rhs1) / det
                a1 = (m11 * rhs1 - m12 * rhs0) / det
                qd[0] += h * a0
                qd[1] += h * a1
                q[0] += h * qd[0]
                q[1] += h * qd[1]
            if not (isfinite(q[0]) and isfinite(q[1]) and isfinite(qd[0])
                    and isfinite(qd[1])):
                fault = 1
                break
            steps = t + 1
            if want_traj:
                rx[t + 1, 0] = q[0]; rx[t + 1, 1] = q[1]
                rv[t + 1, 0] = qd[0]; rv[t + 1, 1] = qd[1]
            if want_u:
                ru[t, 0] = u[0]; ru[t, 1] = u[1]
            if want_lyap:
                rl[t + 1] = arm_lyap(pp, q, qd, m1, m2, l1, l2, i1, i2)
            if want_diss:
                diss = 0.0
                for j in range(2):
                    diss += 0.5 * (qdold[j] + qd[j]) * pp.dvbuf[j]
                rd[t] = diss
    return steps, fault
