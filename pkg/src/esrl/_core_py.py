"""Pure NumPy fallback for the episode kernels.

Mirrors the API of the compiled extension ``esrl._core`` exactly; selected at
import time by :mod:`esrl._backend` when the extension is unavailable (or when
``ESRL_PURE_PYTHON=1``).  Everything here operates on plain float64 arrays so
the two backends can be benchmarked and cross-checked against each other.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"


class PackedPolicy:
    """Evaluation-ready policy tables.

    Holds the clamped quadratic diagonal, the projected (nonnegative)
    convex-net recurrent weights and the damping nets as contiguous arrays.
    Instances are cheap to build and immutable by convention.
    """

    def __init__(self, eta_eff, goal, srelu_d, eps_diag,
                 icnn_wx, icnn_wz, diag_w, diag_b, off_w, off_b):
        self.eta_eff = np.ascontiguousarray(eta_eff, dtype=float)
        self.goal = np.ascontiguousarray(goal, dtype=float)
        self.srelu_d = float(srelu_d)
        self.eps_diag = float(eps_diag)
        self.icnn_wx = [np.ascontiguousarray(m, dtype=float) for m in icnn_wx]
        self.icnn_wz = [np.ascontiguousarray(m, dtype=float) for m in icnn_wz]
        self.diag_w = [np.ascontiguousarray(m, dtype=float) for m in diag_w]
        self.diag_b = [np.ascontiguousarray(v, dtype=float) for v in diag_b]
        self.off_w = [np.ascontiguousarray(m, dtype=float) for m in off_w]
        self.off_b = [np.ascontiguousarray(v, dtype=float) for v in off_b]
        self.n = self.goal.size
        self._tril = [(i, j) for i in range(self.n) for j in range(i)]


def _srelu(x, d):
    return np.where(x >= d, x - 0.5 * d, np.square(np.clip(x, 0.0, None)) / (2.0 * d))


def _srelu_grad(x, d):
    return np.clip(x / d, 0.0, 1.0)


def potential_value_grad(pp: PackedPolicy, xrel):
    """Value and gradient of 0.5 x^T S x + psi(x) at x = xrel (goal-shifted)."""
    d = pp.srelu_d
    pre = [pp.icnn_wx[0] @ xrel]
    z = _srelu(pre[0], d)
    for wz, wx in zip(pp.icnn_wz, pp.icnn_wx[1:]):
        pre.append(wz @ z + wx @ xrel)
        z = _srelu(pre[-1], d)
    value = float(z[0])
    grad = pp.icnn_wx[-1].T @ _srelu_grad(pre[-1], d)
    delta = _srelu_grad(pre[-1], d)
    for i in range(len(pp.icnn_wz) - 1, -1, -1):
        delta = (pp.icnn_wz[i].T @ delta) * _srelu_grad(pre[i], d)
        grad = grad + pp.icnn_wx[i].T @ delta
    quad = 0.5 * float(pp.eta_eff @ np.square(xrel))
    return quad + value, pp.eta_eff * xrel + grad


def _fcnn(w, b, v):
    h = v
    for wi, bi in zip(w[:-1], b[:-1]):
        h = np.tanh(wi @ h + bi)
    return w[-1] @ h + b[-1]


def damping_factor(pp: PackedPolicy, v):
    diag = np.maximum(_fcnn(pp.diag_w, pp.diag_b, v), 0.0) + pp.eps_diag
    off = _fcnn(pp.off_w, pp.off_b, v)
    L = np.diag(diag)
    for k, (i, j) in enumerate(pp._tril):
        L[i, j] = off[k]
    return L


def damping_matrix(pp: PackedPolicy, v):
    L = damping_factor(pp, v)
    return L @ L.T


def policy_action(pp: PackedPolicy, x, v):
    _, grad = potential_value_grad(pp, np.asarray(x, dtype=float) - pp.goal)
    return -grad - damping_matrix(pp, v) @ np.asarray(v, dtype=float)


def _contact(env, walls, x, v):
    """Contact force; mirrors envs.block2d_contact_force on packed params."""
    half, k, c, mu = env[6], env[1], env[2], env[3]
    f = np.zeros(2)
    for box in walls:
        ox = min(x[0] + half, box[1]) - max(x[0] - half, box[0])
        oy = min(x[1] + half, box[3]) - max(x[1] - half, box[2])
        if ox <= 0.0 or oy <= 0.0:
            continue
        if ox <= oy:
            axis, delta = 0, ox
            sign = 1.0 if x[0] >= 0.5 * (box[0] + box[1]) else -1.0
        else:
            axis, delta = 1, oy
            sign = 1.0 if x[1] >= 0.5 * (box[2] + box[3]) else -1.0
        fn = k * delta - c * sign * v[axis]
        if fn < 0.0:
            fn = 0.0
        tang = 1 - axis
        vt = v[tang]
        ft = -np.sign(vt) * min(mu * fn, c * abs(vt))
        f[axis] += sign * fn
        f[tang] += ft
    return f


def _spring_energy(env, walls, x):
    half, k = env[6], env[1]
    e = 0.0
    for box in walls:
        ox = min(x[0] + half, box[1]) - max(x[0] - half, box[0])
        oy = min(x[1] + half, box[3]) - max(x[1] - half, box[2])
        if ox > 0.0 and oy > 0.0:
            e += 0.5 * k * min(ox, oy) ** 2
    return e


def _reward(rp, x, goal):
    d2 = float(np.sum(np.square(x - goal)))
    return -(rp[0] * d2 + rp[1] * np.log(d2 + rp[2]))


def run_block2d(pp: PackedPolicy, env, walls, reward_p, task_goal, x0, v0, T,
                record=None):
    """Closed-loop episode on the block environment.

    ``env`` packs [mass, stiffness, damping, friction, dt, n_substeps,
    half_side, slot_x, surface_y, half_opening, success_depth, lateral_tol].
    Returns (total_reward, success, steps_done, fault).  ``record`` may hold
    preallocated arrays under keys x, v, u, r, lyap, diss, ext_power, spring;
    energy series require n_substeps == 1.
    """
    env = np.asarray(env, dtype=float)
    mass, dt = env[0], env[4]
    nsub = int(env[5])
    h = dt / nsub
    x = np.array(x0, dtype=float)
    v = np.array(v0, dtype=float)
    rec = record or {}
    want_energy = "lyap" in rec or "diss" in rec or "ext_power" in rec
    if want_energy and nsub != 1:
        raise ValueError("energy recording requires n_substeps == 1")

    def lyap(x, v):
        val, _ = potential_value_grad(pp, x - pp.goal)
        return val + 0.5 * mass * float(v @ v)

    total, succ, fault = 0.0, 0, 0
    if "x" in rec:
        rec["x"][0], rec["v"][0] = x, v
    if "lyap" in rec:
        rec["lyap"][0] = lyap(x, v)
    if "spring" in rec:
        rec["spring"][0] = _spring_energy(env, walls, x)
    steps = 0
    for t in range(T):
        val, grad = potential_value_grad(pp, x - pp.goal)
        D = damping_matrix(pp, v)
        u = -grad - D @ v
        v_old = v.copy()
        for _ in range(nsub):
            fc = _contact(env, walls, x, v)
            v = v + (h / mass) * (u + fc)
            x = x + h * v
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            fault = 1
            break
        steps = t + 1
        total += _reward(reward_p, x, task_goal)
        depth_ok = env[8] - (x[1] - env[6]) >= env[10]
        if depth_ok and abs(x[0] - env[7]) <= env[11]:
            succ = 1
        if "x" in rec:
            rec["x"][t + 1], rec["v"][t + 1] = x, v
        if "u" in rec:
            rec["u"][t] = u
        if "r" in rec:
            rec["r"][t] = _reward(reward_p, x, task_goal)
        if "lyap" in rec:
            rec["lyap"][t + 1] = lyap(x, v)
        if "diss" in rec:
            rec["diss"][t] = 0.5 * float((v_old + v) @ D @ v_old)
        if "ext_power" in rec:
            rec["ext_power"][t] = float(fc @ (v_old + v)) * 0.5
        if "spring" in rec:
            rec["spring"][t + 1] = _spring_energy(env, walls, x)
    return total, succ, steps, fault


def _arm_accel(env, q, qd, u):
    m1, m2, l1, l2, i1, i2, bv = env[:7]
    r1, r2 = 0.5 * l1, 0.5 * l2
    c2 = np.cos(q[1])
    m11 = i1 + i2 + m1 * r1 * r1 + m2 * (l1 * l1 + r2 * r2 + 2 * l1 * r2 * c2)
    m12 = i2 + m2 * (r2 * r2 + l1 * r2 * c2)
    m22 = i2 + m2 * r2 * r2
    hc = m2 * l1 * r2 * np.sin(q[1])
    rhs0 = u[0] - (-hc * qd[1] * qd[0] - hc * (qd[0] + qd[1]) * qd[1]) - bv * qd[0]
    rhs1 = u[1] - (hc * qd[0] * qd[0]) - bv * qd[1]
    det = m11 * m22 - m12 * m12
    return np.array([(m22 * rhs0 - m12 * rhs1) / det,
                     (m11 * rhs1 - m12 * rhs0) / det]), (m11, m12, m22)


def run_arm2(pp: PackedPolicy, env, x0, v0, T, record=None):
    """Closed-loop free-motion episode on the arm (f_ext = 0).

    ``env`` packs [m1, m2, l1, l2, I1, I2, b_visc, dt, n_substeps].
    Returns (steps_done, fault); trajectories/energies go into ``record``.
    """
    env = np.asarray(env, dtype=float)
    dt = env[7]
    nsub = int(env[8])
    h = dt / nsub
    q = np.array(x0, dtype=float)
    qd = np.array(v0, dtype=float)
    rec = record or {}
    want_energy = "lyap" in rec or "diss" in rec
    if want_energy and nsub != 1:
        raise ValueError("energy recording requires n_substeps == 1")

    def lyap(q, qd):
        val, _ = potential_value_grad(pp, q - pp.goal)
        _, (m11, m12, m22) = _arm_accel(env, q, qd, np.zeros(2))
        ke = 0.5 * (m11 * qd[0] ** 2 + 2 * m12 * qd[0] * qd[1] + m22 * qd[1] ** 2)
        return val + ke

    if "x" in rec:
        rec["x"][0], rec["v"][0] = q, qd
    if "lyap" in rec:
        rec["lyap"][0] = lyap(q, qd)
    fault, steps = 0, 0
    for t in range(T):
        _, grad = potential_value_grad(pp, q - pp.goal)
        D = damping_matrix(pp, qd)
        u = -grad - D @ qd
        qd_old = qd.copy()
        for _ in range(nsub):
            acc, _ = _arm_accel(env, q, qd, u)
            qd = qd + h * acc
            q = q + h * qd
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            fault = 1
            break
        steps = t + 1
        if "x" in rec:
            rec["x"][t + 1], rec["v"][t + 1] = q, qd
        if "u" in rec:
            rec["u"][t] = u
        if "lyap" in rec:
            rec["lyap"][t + 1] = lyap(q, qd)
        if "diss" in rec:
            rec["diss"][t] = 0.5 * float((qd_old + qd) @ D @ qd_old)
    return steps, fault
