"""Velocity-dependent positive-definite damping matrix.

Two small fully connected networks (tanh hidden layers, identity output) map
the velocity to the entries of a lower triangular matrix L: one net produces
the diagonal, the other the strictly lower triangle.  The diagonal is pushed
through a ReLU and offset by a small positive constant, so L always has a
strictly positive diagonal and ``D = L L^T`` is symmetric positive definite
for every parameter value.  D depends on the velocity only, never on position.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .potential import _as_matrix


@dataclass(frozen=True)
class FcnnParams:
    """Plain MLP weights: affine layers with tanh on hidden, identity output."""

    layer_sizes: tuple[int, ...]
    w: tuple[np.ndarray, ...]
    b: tuple[np.ndarray, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"layer_sizes must be >= 2 positive ints, got {sizes}")
        k = len(sizes) - 1
        w = tuple(_as_matrix(m, f"w[{i}]") for i, m in enumerate(self.w))
        b = []
        for i, v in enumerate(self.b):
            v = np.array(v, dtype=float).reshape(-1)
            if not np.all(np.isfinite(v)):
                raise ValueError(f"b[{i}]: non-finite entries")
            v.setflags(write=False)
            b.append(v)
        b = tuple(b)
        if len(w) != k or len(b) != k:
            raise ValueError(f"expected {k} weight matrices and bias vectors")
        for i in range(k):
            if w[i].shape != (sizes[i + 1], sizes[i]):
                raise ValueError(f"w[{i}] has shape {w[i].shape}, "
                                 f"expected {(sizes[i + 1], sizes[i])}")
            if b[i].shape != (sizes[i + 1],):
                raise ValueError(f"b[{i}] has shape {b[i].shape}, "
                                 f"expected ({sizes[i + 1]},)")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", b)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "w": [m.tolist() for m in self.w],
            "b": [v.tolist() for v in self.b],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FcnnParams":
        return cls(
            layer_sizes=tuple(d["layer_sizes"]),
            w=tuple(np.array(m, dtype=float) for m in d["w"]),
            b=tuple(np.array(v, dtype=float) for v in d["b"]),
        )


def fcnn_eval(p: FcnnParams, v) -> np.ndarray:
    """Forward pass: affine -> tanh -> ... -> affine (no output nonlinearity)."""
    v = np.asarray(v, dtype=float)
    if v.shape != (p.input_dim,):
        raise ValueError(f"input has shape {v.shape}, expected ({p.input_dim},)")
    h = v
    for w, b in zip(p.w[:-1], p.b[:-1]):
        h = np.tanh(w @ h + b)
    return p.w[-1] @ h + p.b[-1]


def tril_indices_rowmajor(n: int) -> list[tuple[int, int]]:
    """Strictly-lower-triangle positions in row-major order.

    This packing order is part of the flat parameter contract: the off-diagonal
    network's j-th output always lands at the same (row, col).
    """
    return [(i, j) for i in range(n) for j in range(i)]


@dataclass(frozen=True)
class DampingParams:
    """Networks for the triangular factor of the damping matrix."""

    diag_net: FcnnParams
    offdiag_net: FcnnParams
    eps_diag: float = 1e-2

    def __post_init__(self):
        n = self.diag_net.input_dim
        if self.diag_net.output_dim != n:
            raise ValueError("diag_net must map n -> n")
        if self.offdiag_net.input_dim != n:
            raise ValueError("offdiag_net input dimension mismatch")
        if self.offdiag_net.output_dim != n * (n - 1) // 2:
            raise ValueError("offdiag_net must output n(n-1)/2 values")
        if not (np.isfinite(self.eps_diag) and self.eps_diag > 0):
            raise ValueError("eps_diag must be positive")
        object.__setattr__(self, "eps_diag", float(self.eps_diag))

    @property
    def dim(self) -> int:
        return self.diag_net.input_dim

    def to_dict(self) -> dict:
        return {"diag_net": self.diag_net.to_dict(),
                "offdiag_net": self.offdiag_net.to_dict(),
                "eps_diag": self.eps_diag}

    @classmethod
    def from_dict(cls, d: dict) -> "DampingParams":
        return cls(FcnnParams.from_dict(d["diag_net"]),
                   FcnnParams.from_dict(d["offdiag_net"]), d["eps_diag"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "DampingParams":
        return cls.from_dict(json.loads(s))


def damping_factor(p: DampingParams, xdot) -> np.ndarray:
    """Lower triangular L with diagonal max(diag_net, 0) + eps_diag."""
    n = p.dim
    diag = np.maximum(fcnn_eval(p.diag_net, xdot), 0.0) + p.eps_diag
    off = fcnn_eval(p.offdiag_net, xdot)
    L = np.diag(diag)
    for k, (i, j) in enumerate(tril_indices_rowmajor(n)):
        L[i, j] = off[k]
    return L


def damping_matrix(p: DampingParams, xdot) -> np.ndarray:
    """D(xdot) = L L^T; symmetric positive definite by construction."""
    L = damping_factor(p, xdot)
    return L @ L.T


def damping_force(p: DampingParams, xdot) -> np.ndarray:
    """Dissipative term -D(xdot) xdot; its power xdot.f is <= 0, zero only at rest."""
    xdot = np.asarray(xdot, dtype=float)
    return -damping_matrix(p, xdot) @ xdot
