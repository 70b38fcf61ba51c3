"""Forward operator contract, synthetic test operators and diagnostics."""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, EstimationError

DEGENERATE_PAIR = 1e-12


class Linearization:
    """Derivative of an operator at a fixed point.

    ``lin(v)`` applies F'(x), ``lin.adjoint(w)`` applies its adjoint with
    respect to the operator's X and Y inner products.
    """

    def __init__(self, forward: Callable, adjoint: Callable):
        self._forward = forward
        self._adjoint = adjoint

    def __call__(self, v):
        return self._forward(v)

    def adjoint(self, w):
        return self._adjoint(w)


class ForwardOperator(ABC):
    """Nonlinear map F: D(F) in X -> Y between finite-dimensional spaces.

    Elements of both spaces are 1-D numpy arrays.  Subclasses override the
    inner products when X or Y are not Euclidean, and ``tangent`` when only a
    subspace of perturbations is admissible (e.g. fields that are fixed on
    part of the boundary).

    Attributes
    ----------
    domain_box : tuple or None
        Pointwise bounds ``(lo, hi)``; evaluation outside raises DomainError.
    C : float or None
        Bound on the derivative norm over the working ball.
    center, radius :
        Working ball B_radius(center).
    linear : bool
    """

    domain_box: Optional[tuple] = None
    C: Optional[float] = None
    center: Optional[np.ndarray] = None
    radius: float = np.inf
    linear: bool = False

    @abstractmethod
    def linearize(self, x: np.ndarray) -> tuple[np.ndarray, Linearization]:
        """Return ``(F(x), F'(x))``."""

    def apply(self, x):
        return self.linearize(x)[0]

    __call__ = apply

    def deriv_apply(self, x, v):
        return self.linearize(x)[1](v)

    def adjoint_apply(self, x, w):
        return self.linearize(x)[1].adjoint(w)

    def inner_x(self, u, v) -> float:
        return float(np.dot(u, v))

    def inner_y(self, p, q) -> float:
        return float(np.dot(p, q))

    def norm_x(self, u) -> float:
        return float(np.sqrt(max(self.inner_x(u, u), 0.0)))

    def norm_y(self, p) -> float:
        return float(np.sqrt(max(self.inner_y(p, p), 0.0)))

    def tangent(self, v):
        return v

    def in_box(self, x) -> bool:
        if self.domain_box is None:
            return True
        lo, hi = self.domain_box
        return bool(np.all(x >= lo) and np.all(x <= hi))

    def check_domain(self, x):
        if not np.all(np.isfinite(x)):
            raise DomainError("point has non-finite entries")
        if not self.in_box(x):
            raise DomainError("point outside the domain box")

    def clamp(self, x):
        if self.domain_box is None:
            return x
        return np.clip(x, *self.domain_box)

    def set_ball(self, center, radius):
        self.center = np.array(center, dtype=float)
        self.radius = float(radius)
        return self


class MatrixOperator(ForwardOperator):
    """Linear operator given by a dense matrix, Euclidean X and Y."""

    linear = True

    def __init__(self, A):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.C = float(np.linalg.norm(self.A, 2))

    def linearize(self, x):
        x = np.asarray(x, dtype=float)
        self.check_domain(x)
        return self.A @ x, Linearization(lambda v: self.A @ v, lambda w: self.A.T @ w)


class DiagonalLinear(ForwardOperator):
    """F(x) = (sigma_i x_i)_i on Euclidean space."""

    linear = True

    def __init__(self, sigmas):
        s = np.asarray(sigmas, dtype=float).ravel()
        if s.size == 0 or not np.all(np.isfinite(s)) or np.any(s <= 0):
            raise ValueError("singular values must be finite and positive")
        self.sigmas = s
        self.C = float(s.max())

    @property
    def condition_number(self) -> float:
        return float(self.sigmas.max() / self.sigmas.min())

    def linearize(self, x):
        x = np.asarray(x, dtype=float)
        self.check_domain(x)
        s = self.sigmas
        return s * x, Linearization(lambda v: s * v, lambda w: s * w)


def make_diagonal_linear(sigmas) -> DiagonalLinear:
    return DiagonalLinear(sigmas)


class QuadraticPerturbation(ForwardOperator):
    """F(x)_i = x_i + c x_i**2, diagonal derivative 1 + 2 c x_i.

    The domain box keeps ``1 + 2 c x_i >= 0.1`` so the derivative stays
    invertible.
    """

    def __init__(self, n: int, c: float):
        if n < 1:
            raise ValueError("dimension must be positive")
        self.n = int(n)
        self.c = float(c)
        edge = 0.45 / abs(self.c) if self.c else np.inf
        if self.c > 0:
            self.domain_box = (-edge, np.inf)
        elif self.c < 0:
            self.domain_box = (-np.inf, edge)
        # on the box |1 + 2 c x| is unbounded, so C is only known per ball
        self.C = None

    def derivative_bound(self, center, radius) -> float:
        """sup of |1 + 2 c x_i| over the Euclidean ball."""
        return float(np.max(np.abs(1.0 + 2.0 * self.c * np.asarray(center)))
                     + 2.0 * abs(self.c) * radius)

    def linearize(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected shape ({self.n},), got {x.shape}")
        self.check_domain(x)
        d = 1.0 + 2.0 * self.c * x
        return x + self.c * x * x, Linearization(lambda v: d * v, lambda w: d * w)


def make_quadratic_perturbation(n: int, c: float) -> QuadraticPerturbation:
    return QuadraticPerturbation(n, c)


# -- diagnostics --------------------------------------------------------------


def _random_unit(op, rng, like, space):
    z = rng.standard_normal(np.shape(like))
    if space == "x":
        z = op.tangent(z)
        return z / op.norm_x(z)
    return z / op.norm_y(z)


def adjoint_dot_test(op: ForwardOperator, x, n_trials: int = 10, seed=0) -> float:
    """Max over random unit pairs of |<F'v, w>_Y - <v, F'* w>_X|."""
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    fx, lin = op.linearize(x)
    worst = 0.0
    for _ in range(n_trials):
        v = _random_unit(op, rng, x, "x")
        w = _random_unit(op, rng, fx, "y")
        lhs = op.inner_y(lin(v), w)
        rhs = op.inner_x(v, lin.adjoint(w))
        worst = max(worst, abs(lhs - rhs))
    return worst


def fd_derivative_error(op: ForwardOperator, x, v, h: float = 1e-4) -> float:
    """Relative error of F'(x)v against a central difference quotient."""
    x = np.asarray(x, dtype=float)
    fd = (op.apply(x + h * v) - op.apply(x - h * v)) / (2 * h)
    dv = op.deriv_apply(x, v)
    return op.norm_y(fd - dv) / max(op.norm_y(dv), 1e-300)


def fd_adjoint_defect(op: ForwardOperator, x, n_trials: int = 10, h: float = 1e-5,
                      seed=0) -> float:
    """Max of |<FD F'(x)v, w>_Y - <v, F'(x)^* w>_X| / (|v| |w|) over random pairs.

    F'(x)v is replaced by a central difference quotient, so the defect is
    dominated by the O(h^2) truncation error.
    """
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    fx, lin = op.linearize(x)
    worst = 0.0
    for _ in range(n_trials):
        v = _random_unit(op, rng, x, "x")
        w = _random_unit(op, rng, fx, "y")
        fd = (op.apply(x + h * v) - op.apply(x - h * v)) / (2 * h)
        worst = max(worst, abs(op.inner_y(fd, w) - op.inner_x(v, lin.adjoint(w))))
    return worst


def estimate_derivative_norm(op: ForwardOperator, x, n_iter: int = 30, seed=0) -> float:
    """Power iteration on F'(x)* F'(x) in the X inner product."""
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    _, lin = op.linearize(x)
    v = _random_unit(op, rng, x, "x")
    sigma2 = 0.0
    for _ in range(n_iter):
        w = op.tangent(lin.adjoint(lin(v)))
        sigma2 = op.norm_x(w)
        if sigma2 == 0.0:
            return 0.0
        v = w / sigma2
    return float(np.sqrt(sigma2))


def tcc_ratio(op: ForwardOperator, x, xbar, lin_x=None) -> Optional[float]:
    """||F(xbar) - F(x) - F'(x)(xbar - x)|| / ||F(xbar) - F(x)||.

    None when the denominator is below the degeneracy threshold.
    """
    if lin_x is None:
        fx, lin = op.linearize(x)
    else:
        fx, lin = lin_x
    diff = op.apply(xbar) - fx
    den = op.norm_y(diff)
    if den < DEGENERATE_PAIR:
        return None
    return op.norm_y(diff - lin(xbar - x)) / den


@dataclass
class TccEstimate:
    eta_hat: float
    n_samples: int
    ball: tuple
    max_ratio_pair: tuple


def sample_ball(op: ForwardOperator, center, radius, rng) -> np.ndarray:
    """Uniform sample from the X-ball, restricted to admissible directions."""
    center = np.asarray(center, dtype=float)
    z = op.tangent(rng.standard_normal(center.shape))
    dim = np.count_nonzero(op.tangent(np.ones_like(center)))
    r = radius * rng.uniform() ** (1.0 / max(dim, 1))
    return op.clamp(center + r * z / op.norm_x(z))


def estimate_tcc_eta(op: ForwardOperator, center, radius: float,
                     n_samples: int = 200, seed=0) -> TccEstimate:
    """Largest sampled cone-condition ratio over pairs in B_radius(center).

    This is a lower bound for the true constant on the ball.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    best, pair, used = -1.0, None, 0
    for _ in range(n_samples):
        x = sample_ball(op, center, radius, rng)
        xbar = sample_ball(op, center, radius, rng)
        r = tcc_ratio(op, x, xbar)
        if r is None:
            continue
        used += 1
        if r > best:
            best, pair = r, (x, xbar)
    if used == 0:
        raise EstimationError("every sampled pair was degenerate")
    return TccEstimate(best, used, (np.asarray(center, dtype=float), radius), pair)


def cone_defects(op: ForwardOperator, x, xbar, eta: float) -> tuple[float, float]:
    """Slack in (1-eta)|F(x)-F(xb)| <= |F'(x)(x-xb)| <= (1+eta)|F(x)-F(xb)|.

    Both returned values are nonnegative when the two-sided bound holds.
    """
    fx, lin = op.linearize(x)
    jump = op.norm_y(fx - op.apply(xbar))
    lin_jump = op.norm_y(lin(np.asarray(x) - xbar))
    return lin_jump - (1 - eta) * jump, (1 + eta) * jump - lin_jump
