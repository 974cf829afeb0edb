"""Convex potential function: clamped diagonal quadratic plus a convex network.

The potential is ``P(x) = 0.5 * x^T S x + psi(x)`` where ``S`` is a diagonal
matrix with entries clamped to a positive range and ``psi`` is a fully
connected input-convex network.  Convexity of ``psi`` is structural: the
recurrent weights are projected to be nonnegative at evaluation time and the
activation is convex and nondecreasing, so no parameter value can break it.
All biases of the convex network are identically zero, which pins the global
minimum ``psi(0) = 0`` without any numerical search.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


def srelu(x, d: float):
    """Smoothed rectifier: zero, then quadratic blend of width ``d``, then affine.

    Piecewise: 0 for x <= 0, x^2/(2d) for 0 < x < d, x - d/2 for x >= d.
    Convex, nonnegative and C^1 in x.  Accepts scalars or arrays.
    """
    _check_srelu_args(x, d)
    x = np.asarray(x, dtype=float)
    out = np.where(x >= d, x - 0.5 * d, np.square(np.clip(x, 0.0, None)) / (2.0 * d))
    return float(out) if out.ndim == 0 else out


def srelu_grad(x, d: float):
    """Derivative of :func:`srelu` in x: 0, then x/d, then 1.  Continuous."""
    _check_srelu_args(x, d)
    x = np.asarray(x, dtype=float)
    out = np.clip(x / d, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def _check_srelu_args(x, d) -> None:
    if not np.all(np.isfinite(x)):
        raise ValueError("srelu: non-finite input")
    if not (np.isfinite(d) and d > 0):
        raise ValueError(f"srelu: smoothing width must be positive, got {d}")


def _as_matrix(a, name: str) -> np.ndarray:
    m = np.array(a, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"{name}: expected a matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name}: non-finite entries")
    m.setflags(write=False)
    return m


@dataclass(frozen=True)
class FicnnParams:
    """Weights of the fully connected input-convex network.

    ``layer_sizes = (n, h1, ..., 1)`` gives the input dimension, hidden widths
    and the scalar output.  ``wx[i]`` maps the input x into layer i+1 and
    exists for every layer; ``wz_raw[i]`` maps hidden layer i+1 into layer i+2
    (there is no recurrent weight into the first hidden layer).  The recurrent
    weights are stored unconstrained and projected elementwise to ``max(., 0)``
    whenever the network is evaluated, so the search space stays unconstrained.
    There are no bias terms.
    """

    layer_sizes: tuple[int, ...]
    wx: tuple[np.ndarray, ...]
    wz_raw: tuple[np.ndarray, ...]
    srelu_d: float = 0.1

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"layer_sizes must be >= 2 positive ints, got {sizes}")
        if sizes[-1] != 1:
            raise ValueError("final layer must be scalar (size 1)")
        if not (np.isfinite(self.srelu_d) and self.srelu_d > 0):
            raise ValueError("srelu_d must be positive and finite")
        k = len(sizes) - 1
        wx = tuple(_as_matrix(m, f"wx[{i}]") for i, m in enumerate(self.wx))
        wz = tuple(_as_matrix(m, f"wz_raw[{i}]") for i, m in enumerate(self.wz_raw))
        if len(wx) != k or len(wz) != k - 1:
            raise ValueError(f"expected {k} wx and {k - 1} wz_raw matrices")
        for i in range(k):
            if wx[i].shape != (sizes[i + 1], sizes[0]):
                raise ValueError(f"wx[{i}] has shape {wx[i].shape}, "
                                 f"expected {(sizes[i + 1], sizes[0])}")
        for i in range(k - 1):
            if wz[i].shape != (sizes[i + 2], sizes[i + 1]):
                raise ValueError(f"wz_raw[{i}] has shape {wz[i].shape}, "
                                 f"expected {(sizes[i + 2], sizes[i + 1])}")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "wx", wx)
        object.__setattr__(self, "wz_raw", wz)
        object.__setattr__(self, "srelu_d", float(self.srelu_d))

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    def wz_effective(self) -> tuple[np.ndarray, ...]:
        """Recurrent weights actually used in evaluation (elementwise >= 0)."""
        return tuple(np.maximum(w, 0.0) for w in self.wz_raw)

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "wx": [m.tolist() for m in self.wx],
            "wz_raw": [m.tolist() for m in self.wz_raw],
            "srelu_d": self.srelu_d,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FicnnParams":
        return cls(
            layer_sizes=tuple(d["layer_sizes"]),
            wx=tuple(np.array(m, dtype=float) for m in d["wx"]),
            wz_raw=tuple(np.array(m, dtype=float) for m in d["wz_raw"]),
            srelu_d=float(d["srelu_d"]),
        )


def _check_input(p, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (p.input_dim,):
        raise ValueError(f"input has shape {x.shape}, expected ({p.input_dim},)")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    return x


def ficnn_eval(p: FicnnParams, x) -> float:
    """Forward pass of the convex network; nonnegative, exactly zero at x=0."""
    x = _check_input(p, x)
    d = p.srelu_d
    z = srelu(p.wx[0] @ x, d)
    for wz, wx in zip(p.wz_effective(), p.wx[1:]):
        z = srelu(wz @ z + wx @ x, d)
    return float(z[0])


def ficnn_input_grad(p: FicnnParams, x) -> np.ndarray:
    """Gradient of the network output in its input (analytic reverse pass)."""
    return ficnn_value_and_grad(p, x)[1]


def ficnn_value_and_grad(p: FicnnParams, x) -> tuple[float, np.ndarray]:
    """Value and input-gradient in one pass.

    The reverse sweep propagates through the fixed recursion
    ``z_{i+1} = srelu(wz_i z_i + wx_i x)``; every layer contributes a
    ``wx_i^T delta_i`` term to the input gradient.
    """
    x = _check_input(p, x)
    d = p.srelu_d
    wz_eff = p.wz_effective()

    pre = [p.wx[0] @ x]
    z = srelu(pre[0], d)
    for wz, wx in zip(wz_eff, p.wx[1:]):
        pre.append(wz @ z + wx @ x)
        z = srelu(pre[-1], d)
    value = float(z[0])

    grad = np.zeros_like(x)
    delta = srelu_grad(pre[-1], d)          # scalar layer, upstream = 1
    grad += p.wx[-1].T @ delta
    for i in range(len(wz_eff) - 1, -1, -1):
        delta = (wz_eff[i].T @ delta) * srelu_grad(pre[i], d)
        grad += p.wx[i].T @ delta
    return value, grad


@dataclass(frozen=True)
class QuadParams:
    """Diagonal quadratic coefficients, clamped into a positive range.

    ``eta`` is stored unclamped; the effective diagonal is
    ``clamp(eta, eta_min, eta_max)`` so the quadratic part is always strictly
    positive definite regardless of what the optimizer proposes.
    """

    eta: np.ndarray
    eta_min: float = 1e-3
    eta_max: float = 5.0

    def __post_init__(self):
        eta = np.array(self.eta, dtype=float).reshape(-1)
        if eta.size == 0 or not np.all(np.isfinite(eta)):
            raise ValueError("eta must be a nonempty finite vector")
        if not (0 < self.eta_min <= self.eta_max):
            raise ValueError("require 0 < eta_min <= eta_max")
        eta.setflags(write=False)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "eta_min", float(self.eta_min))
        object.__setattr__(self, "eta_max", float(self.eta_max))

    @property
    def input_dim(self) -> int:
        return self.eta.size

    def effective_diag(self) -> np.ndarray:
        return np.clip(self.eta, self.eta_min, self.eta_max)

    def to_dict(self) -> dict:
        return {"eta": self.eta.tolist(), "eta_min": self.eta_min,
                "eta_max": self.eta_max}

    @classmethod
    def from_dict(cls, d: dict) -> "QuadParams":
        return cls(np.array(d["eta"], dtype=float), d["eta_min"], d["eta_max"])


@dataclass(frozen=True)
class PotentialParams:
    """Combined potential 0.5 x^T S x + psi(x)."""

    ficnn: FicnnParams
    quad: QuadParams

    def __post_init__(self):
        if self.ficnn.input_dim != self.quad.input_dim:
            raise ValueError("ficnn and quadratic input dimensions differ")

    @property
    def input_dim(self) -> int:
        return self.quad.input_dim

    def to_dict(self) -> dict:
        return {"ficnn": self.ficnn.to_dict(), "quad": self.quad.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "PotentialParams":
        return cls(FicnnParams.from_dict(d["ficnn"]), QuadParams.from_dict(d["quad"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "PotentialParams":
        return cls.from_dict(json.loads(s))


def potential_eval(p: PotentialParams, x) -> float:
    """0.5 sum_j s_j x_j^2 + psi(x); strictly positive away from the origin."""
    x = _check_input(p, x)
    s = p.quad.effective_diag()
    return 0.5 * float(s @ np.square(x)) + ficnn_eval(p.ficnn, x)


def potential_grad(p: PotentialParams, x) -> np.ndarray:
    """Gradient S x + grad psi(x); the policy negates it."""
    x = _check_input(p, x)
    return p.quad.effective_diag() * x + ficnn_input_grad(p.ficnn, x)


def potential_value_and_grad(p: PotentialParams, x) -> tuple[float, np.ndarray]:
    x = _check_input(p, x)
    s = p.quad.effective_diag()
    v, g = ficnn_value_and_grad(p.ficnn, x)
    return 0.5 * float(s @ np.square(x)) + v, s * x + g
