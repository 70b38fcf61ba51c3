"""Relaxed projection Landweber iterations and their diagnostics.

Every member of the family takes the step

    x+ = x - theta * lambda * F'(x)^* F_d(x),
    lambda = p_d(|F_d(x)|) / |F'(x)^* F_d(x)|^2,
    p_d(t) = t ((1 - eta) t - (1 + eta) delta),

i.e. a relaxed orthogonal projection of ``x`` onto the half-space

    H = {z : <z - x, F'(x)^* F_d(x)> <= -p_d(|F_d(x)|)}

which, under the tangential cone condition with constant ``eta``, contains
every solution in the working ball.  ``theta = 1`` is the plain projection
(PLW); particular ``theta`` rules give steepest descent, Landweber and the
minimal error method.  With ``delta = 0`` everything reduces to the
exact-data iteration.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractViolation, DomainError, IterateEscaped
from .operators import ForwardOperator

log = logging.getLogger(__name__)

MEMBERS = ("PLW", "SD", "LW", "ME", "fixed")
ZERO_GRADIENT = 1e-14
DEFAULT_RELAXATION = (1e-8, 1.99)


@dataclass(frozen=True)
class MethodSpec:
    member: str = "PLW"
    eta: float = 0.0
    theta_fixed: float = 1.0
    relaxation: tuple = DEFAULT_RELAXATION

    def __post_init__(self):
        if self.member not in MEMBERS:
            raise ValueError(f"unknown family member {self.member!r}")
        if not 0.0 <= self.eta < 1.0:
            raise ValueError("eta must lie in [0, 1)")
        a, b = self.relaxation
        if not 0.0 < a <= b < 2.0:
            raise ValueError("relaxation bounds must satisfy 0 < a <= b < 2")
        if self.member in ("SD", "LW", "ME") and self.eta >= 0.5:
            raise ValueError(f"{self.member} requires eta < 1/2")
        if self.member == "fixed" and not 0.0 < self.theta_fixed < 2.0:
            raise ValueError("theta_fixed must lie in (0, 2)")

    @property
    def name(self) -> str:
        if self.member == "fixed":
            return f"theta={self.theta_fixed:g}"
        return self.member

    def check_operator(self, op: ForwardOperator):
        """LW and ME need a derivative bound C <= 1."""
        if self.member not in ("LW", "ME"):
            return
        if op.C is None:
            warnings.warn(f"{self.member}: operator declares no derivative bound C",
                          stacklevel=2)
        elif op.C > 1.0 + 1e-12:
            raise ValueError(f"{self.member} requires C <= 1, operator declares {op.C:g}")


@dataclass(frozen=True)
class StoppingRule:
    kind: str = "max-iterations"
    k_max: int = 1000
    tau: float = np.nan
    delta: float = 0.0
    residual_target: float = 0.0

    def __post_init__(self):
        if self.kind not in ("exact-residual", "discrepancy", "max-iterations"):
            raise ValueError(f"unknown stopping rule {self.kind!r}")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if self.delta < 0:
            raise ValueError("noise level must be nonnegative")

    @classmethod
    def discrepancy(cls, tau, delta, k_max=1000):
        return cls("discrepancy", k_max=k_max, tau=tau, delta=delta)

    @classmethod
    def exact(cls, residual_target, k_max=1000):
        return cls("exact-residual", k_max=k_max, residual_target=residual_target)

    def validate(self, eta: float):
        if self.kind == "discrepancy" and not self.tau > tau_lower_bound(eta):
            raise ValueError(
                f"tau = {self.tau:g} must exceed (1+eta)/(1-eta) = {tau_lower_bound(eta):g}")


@dataclass
class IterationRecord:
    k: int
    residual_norm: float
    error_norm: Optional[float] = None
    lambda_k: Optional[float] = None
    theta_k: Optional[float] = None
    step_norm: Optional[float] = None
    grad_norm: Optional[float] = None
    halfspace_gap: Optional[float] = None
    in_ball: bool = True
    theta_clipped: bool = False
    x: Optional[np.ndarray] = field(default=None, repr=False)


class History(list):
    """List of IterationRecord plus the outcome of the run.

    ``status`` is one of ``discrepancy``, ``converged``, ``max-iterations``
    or ``escaped``; ``message`` explains an abort.
    """

    def __init__(self, records=(), status="running", message=""):
        super().__init__(records)
        self.status = status
        self.message = message

    @property
    def stop_k(self) -> int:
        return len(self) - 1

    @property
    def aborted(self) -> bool:
        return self.status == "escaped"

    @property
    def theta_clip_count(self) -> int:
        return sum(r.theta_clipped for r in self)

    def steps(self):
        """Records at which a step was actually taken."""
        return [r for r in self if r.step_norm is not None]


def tau_lower_bound(eta: float) -> float:
    return (1.0 + eta) / (1.0 - eta)


def p_delta(t: float, eta: float, delta: float) -> float:
    """t ((1 - eta) t - (1 + eta) delta); positive iff t > tau_lower_bound * delta."""
    return t * ((1.0 - eta) * t - (1.0 + eta) * delta)


def _zero_gradient(g, r, C):
    return g <= ZERO_GRADIENT * r * (1.0 if C is None else max(C, 1.0))


def lambda_exact(op: ForwardOperator, x, y, eta: float) -> float:
    fx, lin = op.linearize(np.asarray(x, dtype=float))
    res = fx - y
    r = op.norm_y(res)
    g = op.norm_x(lin.adjoint(res))
    if g == 0.0 or _zero_gradient(g, r, op.C):
        return 0.0
    return (1.0 - eta) * r * r / (g * g)


def _theta(member, eta, delta, r, g, s=None, theta_fixed=1.0):
    """Unclipped relaxation factor from residual r, gradient norm g and
    s = |F'(x) F'(x)^* F_d(x)| (SD only)."""
    if member == "PLW":
        return 1.0
    if member == "fixed":
        return theta_fixed
    if member == "ME":
        return 1.0 / (1.0 - eta)
    if r == 0.0:
        raise ContractViolation(f"{member} schedule undefined at zero residual")
    if member == "LW":
        if delta > 0:
            p = p_delta(r, eta, delta)
            if p <= 0.0:
                raise ContractViolation("LW schedule needs the residual above threshold")
            return g * g / p
        return g * g / ((1.0 - eta) * r * r)
    if member == "SD":
        if s is None or s == 0.0:
            raise ContractViolation("SD schedule: F'(x) F'(x)^* F_d(x) vanished")
        return (g * g) / ((1.0 - eta) * r * r) * (g * g) / (s * s)
    raise ValueError(f"unknown family member {member!r}")


def _clip(theta, bounds):
    a, b = bounds
    clipped = not a <= theta <= b
    if clipped:
        log.debug("theta %.6g clipped to [%g, %g]", theta, a, b)
    return float(np.clip(theta, a, b)), clipped


def theta_schedule(member: str, op: ForwardOperator, x_k, y_delta, eta: float,
                   delta: float = 0.0, bounds=None, theta_fixed: float = 1.0) -> float:
    """Relaxation factor of a family member at ``x_k``.

    Noisy data replace F_0 by F_delta in the SD and ME rules; LW uses
    ``|F'^* F_d|^2 / p_d(|F_d|)`` so that its step is exactly the Landweber
    step.  Clipped to ``bounds`` when given.
    """
    fx, lin = op.linearize(np.asarray(x_k, dtype=float))
    res = fx - y_delta
    grad = lin.adjoint(res)
    r, g = op.norm_y(res), op.norm_x(grad)
    s = op.norm_y(lin(grad)) if member == "SD" else None
    theta = _theta(member, eta, delta, r, g, s, theta_fixed)
    return _clip(theta, bounds)[0] if bounds is not None else theta


def _step(op, spec, x, fx, lin, y_delta, delta, x_star=None):
    eta = spec.eta
    res = fx - y_delta
    r = op.norm_y(res)
    grad = lin.adjoint(res)
    g = op.norm_x(grad)
    p = p_delta(r, eta, delta)
    gap = None
    if x_star is not None:
        gap = p + op.inner_x(grad, x_star - x)
    rec = IterationRecord(k=-1, residual_norm=r, grad_norm=g, halfspace_gap=gap)
    if p <= 0.0:
        # not separated from the solution set: nothing to project
        rec.lambda_k, rec.step_norm = 0.0, 0.0
        return x.copy(), rec
    if g == 0.0 or _zero_gradient(g, r, op.C):
        raise ContractViolation(
            f"F'(x)^* F_d(x) vanished at residual {r:.3e}; broken adjoint or eta too small")
    s = op.norm_y(lin(grad)) if spec.member == "SD" else None
    theta, clipped = _clip(_theta(spec.member, eta, delta, r, g, s, spec.theta_fixed),
                           spec.relaxation)
    lam = p / (g * g)
    rec.lambda_k, rec.theta_k, rec.theta_clipped = lam, theta, clipped
    rec.step_norm = theta * lam * g
    return x - (theta * lam) * grad, rec


def step_family(op: ForwardOperator, x_k, y_delta, spec: MethodSpec, delta: float = 0.0,
                x_star=None) -> tuple[np.ndarray, IterationRecord]:
    """One relaxed projection step from ``x_k``; see the module docstring."""
    x = np.asarray(x_k, dtype=float)
    fx, lin = op.linearize(x)
    x_next, rec = _step(op, spec, x, fx, lin, y_delta, delta, x_star)
    rec.k = 0
    if not op.in_box(x_next):
        raise IterateEscaped("step left the domain box")
    return x_next, rec


def separation_gap_exact(op: ForwardOperator, x, x_star, eta: float) -> float:
    """(1-eta)|F_0(x)|^2 + <F'(x)^* F_0(x), x* - x> with y = F(x*).

    Nonpositive whenever the cone condition holds between x and x*.
    """
    return separation_gap_noisy(op, x, x_star, eta, op.apply(x_star), 0.0)


def separation_gap_noisy(op: ForwardOperator, x, x_star, eta: float, y_delta,
                         delta: float) -> float:
    x = np.asarray(x, dtype=float)
    fx, lin = op.linearize(x)
    res = fx - y_delta
    r = op.norm_y(res)
    return p_delta(r, eta, delta) + op.inner_x(lin.adjoint(res), np.asarray(x_star) - x)


def run_iteration(op: ForwardOperator, x0, y_delta, spec: MethodSpec, stop: StoppingRule,
                  x_star=None, store_iterates: bool = False) -> History:
    """Iterate until the stopping rule fires.

    The history holds one record per computed iterate, including the last
    one (which carries no step quantities).  Leaving the working ball or
    the domain box ends the run with ``status == "escaped"``.
    """
    stop.validate(spec.eta)
    spec.check_operator(op)
    delta = stop.delta
    x = np.array(x0, dtype=float)
    center = x.copy() if op.center is None else op.center
    radius = op.radius
    hist = History()

    for k in range(stop.k_max + 1):
        try:
            fx, lin = op.linearize(x)
        except DomainError as exc:
            hist.status, hist.message = "escaped", f"iterate {k}: {exc}"
            break
        r = op.norm_y(fx - y_delta)
        in_ball = op.norm_x(x - center) <= radius * (1 + 1e-12)
        err = op.norm_x(x - x_star) if x_star is not None else None
        done = None
        if stop.kind == "discrepancy" and r <= stop.tau * delta:
            done = "discrepancy"
        elif stop.kind == "exact-residual" and r <= stop.residual_target:
            done = "converged"
        elif k == stop.k_max:
            done = "max-iterations"
        if done or not in_ball:
            hist.append(IterationRecord(k, r, err, in_ball=in_ball,
                                        x=x.copy() if store_iterates else None))
            hist.status = done or "escaped"
            if not in_ball:
                hist.status = "escaped"
                hist.message = f"iterate {k} left the working ball"
            break
        x_next, rec = _step(op, spec, x, fx, lin, y_delta, delta, x_star)
        rec.k, rec.error_norm, rec.in_ball = k, err, in_ball
        if store_iterates:
            rec.x = x.copy()
        hist.append(rec)
        x = x_next

    if hist.theta_clip_count:
        log.warning("%s: theta clipped at %d of %d steps", spec.name,
                    hist.theta_clip_count, len(hist))
    return hist


def monotonicity_check(op: ForwardOperator, rec: IterationRecord, rec_next: IterationRecord,
                       x_star, eta: float, delta: float = 0.0) -> float:
    """|x*-x_k|^2 - |x*-x_{k+1}|^2 - theta(2-theta)(p_d(|F_d(x_k)|)/|F'^* F_d|)^2.

    Requires stored iterates.  Nonnegative when the cone condition holds.
    """
    if rec.x is None or rec_next.x is None:
        raise ValueError("monotonicity check needs stored iterates")
    lhs = op.norm_x(x_star - rec.x) ** 2
    dist_next = op.norm_x(x_star - rec_next.x) ** 2
    if not rec.step_norm:
        return lhs - dist_next
    theta = rec.theta_k
    gain = p_delta(rec.residual_norm, eta, delta) / rec.grad_norm
    return lhs - (dist_next + theta * (2.0 - theta) * gain * gain)


def summability_sum(history: History, eta: float, b: Optional[float] = None) -> float:
    """(2-b) sum_k theta_k ((1-eta)|F_0(x_k)|^2 / |F'^* F_0(x_k)|)^2 (exact data).

    ``b`` defaults to the largest theta used in the run.
    """
    steps = history.steps()
    steps = [s for s in steps if s.step_norm > 0]
    if not steps:
        return 0.0
    thetas = np.array([s.theta_k for s in steps])
    if b is None:
        b = float(thetas.max())
    gains = np.array([(1 - eta) * s.residual_norm ** 2 / s.grad_norm for s in steps])
    return float((2.0 - b) * np.sum(thetas * gains ** 2))


def finiteness_bound(C: float, dist0: float, a: float, b: float, tau: float, eta: float,
                     delta: float) -> float:
    """Upper bound for k_*+1 under the discrepancy principle.

    ``C^2 |x0 - x*|^2 / (a (2-b) h^2)`` with
    ``h = (tau - (1+eta)/(1-eta)) (1-eta) delta``.
    """
    h = (tau - tau_lower_bound(eta)) * (1.0 - eta) * delta
    if h <= 0:
        return np.inf
    return C * C * dist0 * dist0 / (a * (2.0 - b) * h * h)
