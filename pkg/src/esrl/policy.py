"""Deterministic energy-shaping policy and its flat parameter vector.

The control law is ``u = -S (x - goal) - grad_psi(x - goal) - D(xdot) xdot``:
the negative gradient of a convex potential centered on the goal plus a
dissipative damping term.  Every parameter vector yields a potential with its
unique quadratic floor at the goal and a positive definite damping matrix, so
the search over the flat vector is unconstrained.

The flat layout is fixed and documented: eta first, then the convex-net
matrices in layer order (wx0, wz1, wx1, wz2, wx2, ...), then the diagonal
damping net (w0, b0, w1, b1, ...), then the off-diagonal net.  Matrices are
flattened row-major.  Checkpoints store a hash of the layout so a wrong
architecture cannot silently load.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .potential import (FicnnParams, PotentialParams, QuadParams,
                        potential_value_and_grad)
from .damping import DampingParams, FcnnParams, damping_matrix

VARIANTS = ("combined", "icnn_only", "quad_only")


@dataclass(frozen=True)
class PolicyArch:
    """Architecture and fixed hyperparameters; everything except the weights.

    ``variant`` selects which parameter groups the optimizer searches:
    "combined" searches all of them, "icnn_only" pins eta at eta_min, and
    "quad_only" pins the convex net weights at zero.  Pinned groups are
    excluded from the flat vector but reconstructed on unflatten.
    """

    n: int
    icnn_hidden: tuple[int, ...] = (16, 16)
    damp_hidden: tuple[int, ...] = (8, 8)
    srelu_d: float = 0.1
    eta_min: float = 1e-3
    eta_max: float = 5.0
    eta_init: float = 0.1
    eps_diag: float = 1e-2
    goal: tuple[float, ...] = ()
    variant: str = "combined"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        goal = tuple(float(g) for g in self.goal) or (0.0,) * self.n
        if len(goal) != self.n:
            raise ValueError("goal dimension mismatch")
        object.__setattr__(self, "goal", goal)
        object.__setattr__(self, "icnn_hidden", tuple(int(h) for h in self.icnn_hidden))
        object.__setattr__(self, "damp_hidden", tuple(int(h) for h in self.damp_hidden))

    @property
    def icnn_sizes(self) -> tuple[int, ...]:
        return (self.n, *self.icnn_hidden, 1)

    @property
    def diag_sizes(self) -> tuple[int, ...]:
        return (self.n, *self.damp_hidden, self.n)

    @property
    def offdiag_sizes(self) -> tuple[int, ...]:
        return (self.n, *self.damp_hidden, self.n * (self.n - 1) // 2)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyArch":
        d = dict(d)
        for key in ("icnn_hidden", "damp_hidden", "goal"):
            d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class EsPolicyParams:
    """Full parameter set of one energy-shaping policy."""

    potential: PotentialParams
    damping: DampingParams
    goal: np.ndarray

    def __post_init__(self):
        goal = np.array(self.goal, dtype=float).reshape(-1)
        n = self.potential.input_dim
        if goal.shape != (n,) or self.damping.dim != n:
            raise ValueError("potential, damping and goal dimensions disagree")
        if not np.all(np.isfinite(goal)):
            raise ValueError("goal must be finite")
        goal.setflags(write=False)
        object.__setattr__(self, "goal", goal)

    @property
    def dim(self) -> int:
        return self.potential.input_dim

    def to_dict(self) -> dict:
        return {"potential": self.potential.to_dict(),
                "damping": self.damping.to_dict(),
                "goal": self.goal.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "EsPolicyParams":
        return cls(PotentialParams.from_dict(d["potential"]),
                   DampingParams.from_dict(d["damping"]),
                   np.array(d["goal"], dtype=float))


def policy_action(p: EsPolicyParams, x, xdot) -> np.ndarray:
    """Evaluate the control law at (x, xdot)."""
    x = np.asarray(x, dtype=float)
    xdot = np.asarray(xdot, dtype=float)
    if x.shape != (p.dim,) or xdot.shape != (p.dim,):
        raise ValueError(f"state must be two vectors of length {p.dim}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xdot))):
        raise ValueError("non-finite state")
    _, grad = potential_value_and_grad(p.potential, x - p.goal)
    return -grad - damping_matrix(p.damping, xdot) @ xdot


# --- flat parameter vector ------------------------------------------------

@dataclass(frozen=True)
class Segment:
    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


@dataclass(frozen=True)
class ParamLayout:
    """Mapping between the flat search vector and structured parameters."""

    arch: PolicyArch
    segments: tuple[Segment, ...]

    @property
    def total_size(self) -> int:
        return sum(s.size for s in self.segments)

    @property
    def layout_hash(self) -> str:
        doc = {"arch": self.arch.to_dict(),
               "segments": [[s.name, list(s.shape)] for s in self.segments]}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def flatten(self, p: EsPolicyParams) -> np.ndarray:
        parts = {name: arr for name, arr in _named_arrays(p)}
        return np.concatenate([np.asarray(parts[s.name], dtype=float).ravel()
                               for s in self.segments])

    def unflatten(self, values: np.ndarray) -> EsPolicyParams:
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.size != self.total_size:
            raise ValueError(f"flat vector has {values.size} entries, "
                             f"layout expects {self.total_size}")
        arrays = dict(_pinned_arrays(self.arch))
        for s in self.segments:
            arrays[s.name] = values[s.offset:s.offset + s.size].reshape(s.shape)
        return _assemble(self.arch, arrays)


@dataclass(frozen=True)
class FlatParamVector:
    values: np.ndarray
    layout: ParamLayout

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size != self.layout.total_size:
            raise ValueError("flat vector length does not match layout")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def to_params(self) -> EsPolicyParams:
        return self.layout.unflatten(self.values)


def _segment_specs(arch: PolicyArch):
    """All parameter groups in canonical order, with pin rules per variant."""
    specs = [("eta", (arch.n,), arch.variant == "icnn_only")]
    icnn = arch.icnn_sizes
    pin_icnn = arch.variant == "quad_only"
    specs.append((f"ficnn.wx0", (icnn[1], arch.n), pin_icnn))
    for i in range(1, len(icnn) - 1):
        specs.append((f"ficnn.wz{i}", (icnn[i + 1], icnn[i]), pin_icnn))
        specs.append((f"ficnn.wx{i}", (icnn[i + 1], arch.n), pin_icnn))
    for prefix, sizes in (("damp_diag", arch.diag_sizes),
                          ("damp_offdiag", arch.offdiag_sizes)):
        for i in range(len(sizes) - 1):
            specs.append((f"{prefix}.w{i}", (sizes[i + 1], sizes[i]), False))
            specs.append((f"{prefix}.b{i}", (sizes[i + 1],), False))
    return specs


def build_layout(arch: PolicyArch) -> ParamLayout:
    segments, offset = [], 0
    for name, shape, pinned in _segment_specs(arch):
        if pinned:
            continue
        segments.append(Segment(name, shape, offset))
        offset += int(np.prod(shape))
    return ParamLayout(arch, tuple(segments))


def _pinned_arrays(arch: PolicyArch) -> list[tuple[str, np.ndarray]]:
    out = []
    for name, shape, pinned in _segment_specs(arch):
        if not pinned:
            continue
        if name == "eta":
            out.append((name, np.full(shape, arch.eta_min)))
        else:
            out.append((name, np.zeros(shape)))
    return out


def _named_arrays(p: EsPolicyParams) -> list[tuple[str, np.ndarray]]:
    out = [("eta", p.potential.quad.eta), ("ficnn.wx0", p.potential.ficnn.wx[0])]
    for i, wz in enumerate(p.potential.ficnn.wz_raw, start=1):
        out.append((f"ficnn.wz{i}", wz))
        out.append((f"ficnn.wx{i}", p.potential.ficnn.wx[i]))
    for prefix, net in (("damp_diag", p.damping.diag_net),
                        ("damp_offdiag", p.damping.offdiag_net)):
        for i, (w, b) in enumerate(zip(net.w, net.b)):
            out.append((f"{prefix}.w{i}", w))
            out.append((f"{prefix}.b{i}", b))
    return out


def _assemble(arch: PolicyArch, arrays: dict) -> EsPolicyParams:
    icnn = arch.icnn_sizes
    k = len(icnn) - 1
    ficnn = FicnnParams(
        layer_sizes=icnn,
        wx=tuple(arrays[f"ficnn.wx{i}"] for i in range(k)),
        wz_raw=tuple(arrays[f"ficnn.wz{i}"] for i in range(1, k)),
        srelu_d=arch.srelu_d,
    )
    quad = QuadParams(arrays["eta"], arch.eta_min, arch.eta_max)

    def net(prefix, sizes):
        m = len(sizes) - 1
        return FcnnParams(sizes,
                          w=tuple(arrays[f"{prefix}.w{i}"] for i in range(m)),
                          b=tuple(arrays[f"{prefix}.b{i}"] for i in range(m)))

    damping = DampingParams(net("damp_diag", arch.diag_sizes),
                            net("damp_offdiag", arch.offdiag_sizes),
                            arch.eps_diag)
    return EsPolicyParams(PotentialParams(ficnn, quad), damping,
                          np.array(arch.goal))


def arch_from_params(p: EsPolicyParams, variant: str = "combined") -> PolicyArch:
    return PolicyArch(
        n=p.dim,
        icnn_hidden=p.potential.ficnn.layer_sizes[1:-1],
        damp_hidden=p.damping.diag_net.layer_sizes[1:-1],
        srelu_d=p.potential.ficnn.srelu_d,
        eta_min=p.potential.quad.eta_min,
        eta_max=p.potential.quad.eta_max,
        eps_diag=p.damping.eps_diag,
        goal=tuple(p.goal),
        variant=variant,
    )


def flatten(p: EsPolicyParams) -> FlatParamVector:
    """Flatten all parameters under the combined layout."""
    layout = build_layout(arch_from_params(p))
    return FlatParamVector(layout.flatten(p), layout)


def unflatten(layout: ParamLayout, values) -> EsPolicyParams:
    return layout.unflatten(np.asarray(values, dtype=float))


def init_flat(layout: ParamLayout, rng: np.random.Generator) -> np.ndarray:
    """Canonical starting point for the search distribution mean.

    Weight matrices get a symmetric fan-scaled uniform draw, biases start at
    zero and eta at its configured initial value.  Draw order follows the
    layout so a seed pins the whole vector.
    """
    values = np.empty(layout.total_size)
    for s in layout.segments:
        if s.name == "eta":
            block = np.full(s.shape, layout.arch.eta_init)
        elif ".b" in s.name:
            block = np.zeros(s.shape)
        else:
            fan_out, fan_in = s.shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            block = rng.uniform(-limit, limit, size=s.shape)
        values[s.offset:s.offset + s.size] = block.ravel()
    return values


def init_params(arch: PolicyArch, rng: np.random.Generator) -> EsPolicyParams:
    layout = build_layout(arch)
    return layout.unflatten(init_flat(layout, rng))


# --- checkpoints ------------------------------------------------------------

CHECKPOINT_FORMAT = "es-policy-checkpoint-v1"


def save_checkpoint(path, layout: ParamLayout, values, meta: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "arch": layout.arch.to_dict(),
        "layout_hash": layout.layout_hash,
        "values": np.asarray(values, dtype=float).tolist(),
        "meta": meta or {},
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(path) -> tuple[ParamLayout, np.ndarray, dict]:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a policy checkpoint: {path}")
    layout = build_layout(PolicyArch.from_dict(doc["arch"]))
    if layout.layout_hash != doc["layout_hash"]:
        raise ValueError("checkpoint layout hash mismatch")
    values = np.array(doc["values"], dtype=float)
    if values.size != layout.total_size:
        raise ValueError("checkpoint value count does not match layout")
    return layout, values, doc.get("meta", {})
