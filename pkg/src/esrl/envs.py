"""Deterministic physics environments: 2D block insertion and a planar arm.

Both are gravity compensated.  The block is a square that slides without
rotating, driven by a force at its center of mass; the slot walls are
axis-aligned boxes with a penalty contact model (one-sided spring-damper
normal force plus Coulomb-capped viscous friction).  The arm is the standard
planar two-link manipulator with closed-form inertia and Coriolis matrices.

Integration is semi-implicit Euler at a fixed step.  A control step of size
``dt`` may be split into ``n_substeps`` physics substeps with the action held
constant; substep count is fixed per config, never adaptive.  All stepping is
pure arithmetic on the state, so trajectories are bit-reproducible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class SimState:
    """Generalized position/velocity plus elapsed time."""

    x: np.ndarray
    xdot: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1)
        xd = np.array(self.xdot, dtype=float).reshape(-1)
        if x.shape != xd.shape:
            raise ValueError("position and velocity dimensions differ")
        x.setflags(write=False)
        xd.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xdot", xd)
        object.__setattr__(self, "t", float(self.t))

    @property
    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.xdot)))


class EnvFault(RuntimeError):
    """Raised when integration produces a non-finite state."""


# --- 2D block insertion -----------------------------------------------------

@dataclass(frozen=True)
class Block2dConfig:
    """Square block sliding in a vertical plane toward a tight slot.

    The slot is an opening of width ``block_side + slot_clearance`` cut into a
    solid base whose top surface is at ``slot_position[1]``.  ``goal`` is the
    block-center position when seated at the slot bottom.  ``success_depth``
    is how far the block's bottom edge must sink below the surface to count
    as inserted.  An optional lip on the approach side of the opening forces
    a curved insertion path.
    """

    block_side: float = 0.050
    slot_clearance: float = 0.002
    slot_depth: float = 0.050
    slot_position: tuple[float, float] = (0.0, 0.0)
    mass: float = 0.2
    contact_stiffness: float = 5e4
    contact_damping: float = 100.0
    wall_friction: float = 0.3
    dt: float = 0.01
    n_substeps: int = 10
    goal: tuple[float, float] = (0.0, -0.025)
    success_depth: float = 0.025
    start: tuple[float, float] = (0.06, 0.026)
    lip_height: float = 0.0
    lip_width: float = 0.015
    base_half_width: float = 0.5
    base_depth: float = 0.1
    walls_enabled: bool = True

    def __post_init__(self):
        if not (0 < self.slot_clearance < self.block_side):
            raise ValueError("require 0 < clearance < block_side")
        if min(self.contact_stiffness, self.contact_damping, self.dt,
               self.mass) <= 0:
            raise ValueError("stiffness, damping, dt and mass must be positive")
        if self.n_substeps < 1:
            raise ValueError("n_substeps must be >= 1")

    @property
    def half_side(self) -> float:
        return 0.5 * self.block_side

    @property
    def half_opening(self) -> float:
        return 0.5 * (self.block_side + self.slot_clearance)


def block2d_walls(cfg: Block2dConfig) -> np.ndarray:
    """Static wall boxes as rows (xlo, xhi, ylo, yhi)."""
    if not cfg.walls_enabled:
        return np.zeros((0, 4))
    sx, sy = cfg.slot_position
    w, ext, dep = cfg.half_opening, cfg.base_half_width, cfg.base_depth
    boxes = [
        (sx - ext, sx - w, sy - dep, sy),            # base, left of slot
        (sx + w, sx + ext, sy - dep, sy),            # base, right of slot
        (sx - ext, sx + ext, sy - dep, sy - cfg.slot_depth),  # under the slot
    ]
    if cfg.lip_height > 0:
        boxes.append((sx + w, sx + w + cfg.lip_width, sy, sy + cfg.lip_height))
    return np.array(boxes, dtype=float)


def block2d_contact_force(cfg: Block2dConfig, x, xdot) -> np.ndarray:
    """Total penalty contact force on the block at (x, xdot).

    Per overlapping wall box the push direction is the axis of least overlap.
    The normal force is k*delta + c*(penetration rate), clamped at zero so the
    contact never pulls; friction opposes tangential slip, viscous at small
    speed and capped at mu times the normal force.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(xdot, dtype=float)
    h = cfg.half_side
    f = np.zeros(2)
    for box in block2d_walls(cfg):
        ox = min(x[0] + h, box[1]) - max(x[0] - h, box[0])
        oy = min(x[1] + h, box[3]) - max(x[1] - h, box[2])
        if ox <= 0.0 or oy <= 0.0:
            continue
        if ox <= oy:
            axis, delta = 0, ox
            sign = 1.0 if x[0] >= 0.5 * (box[0] + box[1]) else -1.0
        else:
            axis, delta = 1, oy
            sign = 1.0 if x[1] >= 0.5 * (box[2] + box[3]) else -1.0
        v_n = sign * v[axis]                      # separation rate
        fn = cfg.contact_stiffness * delta - cfg.contact_damping * v_n
        if fn < 0.0:
            fn = 0.0
        tang = 1 - axis
        vt = v[tang]
        ft = -np.sign(vt) * min(cfg.wall_friction * fn,
                                cfg.contact_damping * abs(vt))
        f[axis] += sign * fn
        f[tang] += ft
    return f


def block2d_spring_energy(cfg: Block2dConfig, x) -> float:
    """Elastic energy currently stored in wall penetrations."""
    x = np.asarray(x, dtype=float)
    h = cfg.half_side
    e = 0.0
    for box in block2d_walls(cfg):
        ox = min(x[0] + h, box[1]) - max(x[0] - h, box[0])
        oy = min(x[1] + h, box[3]) - max(x[1] - h, box[2])
        if ox > 0.0 and oy > 0.0:
            e += 0.5 * cfg.contact_stiffness * min(ox, oy) ** 2
    return e


def block2d_step(cfg: Block2dConfig, s: SimState, u) -> SimState:
    """One control step (n_substeps semi-implicit Euler substeps, u held)."""
    u = np.asarray(u, dtype=float)
    if not (s.is_finite and np.all(np.isfinite(u))):
        raise EnvFault("non-finite state or action")
    h = cfg.dt / cfg.n_substeps
    x, v = s.x.copy(), s.xdot.copy()
    for _ in range(cfg.n_substeps):
        f = u + block2d_contact_force(cfg, x, v)
        v = v + (h / cfg.mass) * f
        x = x + h * v
    out = SimState(x, v, s.t + cfg.dt)
    if not out.is_finite:
        raise EnvFault("state diverged")
    return out


def block2d_insertion_depth(cfg: Block2dConfig, s: SimState) -> float:
    """How far the block bottom sits below the base surface, if in the slot."""
    sx, sy = cfg.slot_position
    lateral_ok = abs(s.x[0] - sx) <= cfg.half_opening - cfg.half_side \
        + cfg.slot_clearance
    if not lateral_ok:
        return 0.0
    return max(0.0, sy - (s.x[1] - cfg.half_side))


def success(cfg: Block2dConfig, s: SimState) -> bool:
    return block2d_insertion_depth(cfg, s) >= cfg.success_depth


# --- planar two-link arm ----------------------------------------------------

def _rod_inertias(masses, lengths) -> tuple[float, float]:
    return tuple(m * l * l / 12.0 for m, l in zip(masses, lengths))


@dataclass(frozen=True)
class Arm2Config:
    """Two-link arm in the horizontal plane (or gravity compensated).

    Centers of mass sit at mid-link; inertias default to uniform rods.  The
    gravity term of the manipulator equation is cancelled by the assumed
    compensation, so the net conservative force is zero.
    """

    link_masses: tuple[float, float] = (1.0, 1.0)
    link_lengths: tuple[float, float] = (0.5, 0.5)
    link_inertias: tuple[float, float] | None = None
    gravity: float = 9.81
    joint_viscous_friction: float = 0.0
    dt: float = 1e-3
    n_substeps: int = 1

    def __post_init__(self):
        if min(self.link_masses) <= 0 or min(self.link_lengths) <= 0:
            raise ValueError("masses and lengths must be positive")
        if self.dt <= 0 or self.n_substeps < 1:
            raise ValueError("dt must be positive, n_substeps >= 1")
        inertias = self.link_inertias
        if inertias is None:
            inertias = _rod_inertias(self.link_masses, self.link_lengths)
        if min(inertias) <= 0:
            raise ValueError("inertias must be positive")
        object.__setattr__(self, "link_inertias", tuple(float(i) for i in inertias))


def arm2_mass_matrix(cfg: Arm2Config, q) -> np.ndarray:
    m1, m2 = cfg.link_masses
    l1, l2 = cfg.link_lengths
    i1, i2 = cfg.link_inertias
    r1, r2 = 0.5 * l1, 0.5 * l2
    c2 = np.cos(q[1])
    m11 = i1 + i2 + m1 * r1 ** 2 + m2 * (l1 ** 2 + r2 ** 2 + 2 * l1 * r2 * c2)
    m12 = i2 + m2 * (r2 ** 2 + l1 * r2 * c2)
    m22 = i2 + m2 * r2 ** 2
    return np.array([[m11, m12], [m12, m22]])


def arm2_coriolis(cfg: Arm2Config, q, qdot) -> np.ndarray:
    """Coriolis matrix in Christoffel form, so Mdot - 2C is skew-symmetric."""
    m2 = cfg.link_masses[1]
    l1, r2 = cfg.link_lengths[0], 0.5 * cfg.link_lengths[1]
    hc = m2 * l1 * r2 * np.sin(q[1])
    return np.array([[-hc * qdot[1], -hc * (qdot[0] + qdot[1])],
                     [hc * qdot[0], 0.0]])


def arm2_gravity(cfg: Arm2Config, q) -> np.ndarray:
    """Net gravity torque after compensation: identically zero."""
    return np.zeros(2)


def arm2_dynamics(cfg: Arm2Config, q, qdot, u, f_ext=None) -> np.ndarray:
    """Joint accelerations M^{-1}(u + f_ext - C qdot - g - b qdot)."""
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    rhs = np.asarray(u, dtype=float) - arm2_coriolis(cfg, q, qdot) @ qdot \
        - arm2_gravity(cfg, q) - cfg.joint_viscous_friction * qdot
    if f_ext is not None:
        rhs = rhs + np.asarray(f_ext, dtype=float)
    m = arm2_mass_matrix(cfg, q)
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if not det > 0:
        raise AssertionError("mass matrix lost positive definiteness")
    qdd0 = (m[1, 1] * rhs[0] - m[0, 1] * rhs[1]) / det
    qdd1 = (m[0, 0] * rhs[1] - m[1, 0] * rhs[0]) / det
    return np.array([qdd0, qdd1])


def arm2_step(cfg: Arm2Config, s: SimState, u) -> SimState:
    """Semi-implicit Euler control step for the arm (f_ext = 0)."""
    u = np.asarray(u, dtype=float)
    if not (s.is_finite and np.all(np.isfinite(u))):
        raise EnvFault("non-finite state or action")
    h = cfg.dt / cfg.n_substeps
    q, qd = s.x.copy(), s.xdot.copy()
    for _ in range(cfg.n_substeps):
        qd = qd + h * arm2_dynamics(cfg, q, qd, u)
        q = q + h * qd
    out = SimState(q, qd, s.t + cfg.dt)
    if not out.is_finite:
        raise EnvFault("state diverged")
    return out


def arm2_kinetic_energy(cfg: Arm2Config, s: SimState) -> float:
    return 0.5 * float(s.xdot @ arm2_mass_matrix(cfg, s.x) @ s.xdot)


# --- uniform wrapper interface ----------------------------------------------

class Block2dEnv:
    """Stateless stepping interface over a block config."""

    def __init__(self, cfg: Block2dConfig):
        self.cfg = cfg

    @property
    def dim(self) -> int:
        return 2

    @property
    def goal(self) -> np.ndarray:
        return np.array(self.cfg.goal)

    def initial_state(self) -> SimState:
        return SimState(np.array(self.cfg.start), np.zeros(2))

    def step(self, s: SimState, u) -> SimState:
        return block2d_step(self.cfg, s, u)

    def is_success(self, s: SimState) -> bool:
        return success(self.cfg, s)

    def mass_matrix(self, x) -> np.ndarray:
        return self.cfg.mass * np.eye(2)

    def contact_force(self, s: SimState) -> np.ndarray:
        return block2d_contact_force(self.cfg, s.x, s.xdot)

    def spring_energy(self, s: SimState) -> float:
        return block2d_spring_energy(self.cfg, s.x)


class Arm2Env:
    """Stateless stepping interface over an arm config (no task success)."""

    def __init__(self, cfg: Arm2Config, start=(0.0, 0.0), goal=(0.0, 0.0)):
        self.cfg = cfg
        self._start = np.array(start, dtype=float)
        self._goal = np.array(goal, dtype=float)

    @property
    def dim(self) -> int:
        return 2

    @property
    def goal(self) -> np.ndarray:
        return self._goal.copy()

    def initial_state(self) -> SimState:
        return SimState(self._start.copy(), np.zeros(2))

    def step(self, s: SimState, u) -> SimState:
        return arm2_step(self.cfg, s, u)

    def is_success(self, s: SimState) -> bool:
        return False

    def mass_matrix(self, x) -> np.ndarray:
        return arm2_mass_matrix(self.cfg, x)

    def contact_force(self, s: SimState) -> np.ndarray:
        return np.zeros(2)

    def spring_energy(self, s: SimState) -> float:
        return 0.0


def write_trajectory_csv(path, times, xs, xdots, us, rewards) -> None:
    """Dump a rollout as CSV with columns t, x*, xdot*, u*, reward."""
    xs = np.asarray(xs)
    n = xs.shape[1]
    header = (["t"] + [f"x{i}" for i in range(n)]
              + [f"xdot{i}" for i in range(n)]
              + [f"u{i}" for i in range(n)] + ["reward"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(len(times)):
            row = [repr(float(times[k]))]
            row += [repr(float(v)) for v in xs[k]]
            row += [repr(float(v)) for v in np.asarray(xdots)[k]]
            if k < len(us):
                row += [repr(float(v)) for v in np.asarray(us)[k]]
                row.append(repr(float(rewards[k])))
            else:
                row += [""] * (n + 1)
            writer.writerow(row)
