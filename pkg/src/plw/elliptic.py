"""2D elliptic parameter identification: recover ``a`` in

    div(mu_n a grad u) = 0   in the unit square,
    u = -U                   on the Dirichlet boundary,
    grad u . nu = 0          on the Neumann boundary,

from the boundary flux ``mu_n a du/dnu`` on the measurement segment Gamma1.

The state equation is discretised with the conservative 5-point scheme
(harmonic-mean edge coefficients, trapezoidal weights).  Boundary fluxes are
taken from second-order one-sided normal differences by default; the
variational recovery ``flux_b = (K(a) u)_b / l_b`` (``l_b`` the line weight
of node ``b``) is available as ``flux="variational"`` and is exactly
conservative.

Parameters live in the affine space of grid functions that agree with the
known boundary trace on the Dirichlet part; admissible perturbations vanish
there and the X inner product is the discrete H1 product.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .errors import DomainError
from .operators import ForwardOperator, Linearization, estimate_derivative_norm
from .spaces import (BoundaryTrace, Grid2D, GridFunction, RieszH1, check_residual)

SETUP_KINDS = ("calderon", "semiconductor")
PHANTOMS = ("smooth-bump", "piecewise-junction")
FLUX_RECOVERY = ("one-sided", "variational")


@dataclass(frozen=True, eq=False)
class EllipticSetup:
    grid: Grid2D
    kind: str
    dirichlet_source: BoundaryTrace
    measurement_segment: str = "gamma1"
    a_bounds: tuple = (0.1, 10.0)
    mu_n: float = 1.0
    flux: str = "one-sided"

    def __post_init__(self):
        if self.flux not in FLUX_RECOVERY:
            raise ValueError(f"unknown flux recovery {self.flux!r}")
        if self.kind not in SETUP_KINDS:
            raise ValueError(f"unknown setup {self.kind!r}")
        a_m, a_M = self.a_bounds
        if not 0 < a_m <= a_M:
            raise ValueError("need 0 < a_m <= a_M")
        if self.mu_n <= 0:
            raise ValueError("mobility must be positive")

    @property
    def measurement_nodes(self) -> np.ndarray:
        return self.grid.segment(self.measurement_segment)

    @property
    def measurement_weights(self) -> np.ndarray:
        return self.grid.segment_weights(self.measurement_segment)


def calderon_source(x, y):
    """sin(pi x) on the bottom/top edges, -sin(pi y) on the left/right edges."""
    on_lr = np.isclose(x, 0.0) | np.isclose(x, 1.0)
    return np.where(on_lr, -np.sin(np.pi * y), np.sin(np.pi * x))


def make_setup(kind: str = "calderon", n: int = 32, a_bounds=(0.1, 10.0),
               mu_n: float = 1.0, flux: str = "one-sided") -> EllipticSetup:
    grid = Grid2D(n, n, kind)
    if kind == "calderon":
        U = BoundaryTrace.from_function(grid, "dirichlet", calderon_source)
    else:
        # U = 1 on the bottom contact Gamma0, U = 0 on the measured contact Gamma1
        U = BoundaryTrace.from_function(grid, "dirichlet", lambda x, y: np.where(y < 0.5, 1.0, 0.0))
    return EllipticSetup(grid, kind, U, "gamma1", tuple(a_bounds), mu_n, flux)


# -- discrete state ---------------------------------------------------------


def _check_bounds(setup, a):
    a_m, a_M = setup.a_bounds
    if not np.all(np.isfinite(a)) or a.min() < a_m or a.max() > a_M:
        raise DomainError(f"coefficient outside [{a_m:g}, {a_M:g}]")


def _harmonic_faces(grid, a):
    """Harmonic-mean edge coefficients and their partial derivatives."""
    p, q, _ = grid.faces
    ap, aq = a[p], a[q]
    s = ap + aq
    return 2 * ap * aq / s, 2 * aq * aq / (s * s), 2 * ap * ap / (s * s)


def _dirichlet_values(grid, data) -> np.ndarray:
    nodes = grid.segment("dirichlet")
    if isinstance(data, BoundaryTrace):
        if data.grid != grid:
            raise ValueError("Dirichlet data lives on another grid")
        full = np.full(grid.n_nodes, np.nan)
        full[data.nodes] = data.values
        vals = full[nodes]
        if np.isnan(vals).any():
            raise ValueError(f"trace on {data.segment!r} does not cover the Dirichlet part")
        return vals
    vals = np.asarray(data, dtype=float)
    if vals.shape != nodes.shape:
        raise ValueError("Dirichlet data must have one value per Dirichlet node")
    return vals


class _State:
    """Factorised state system at a fixed coefficient."""

    def __init__(self, setup: EllipticSetup, a: np.ndarray):
        grid = setup.grid
        self.grid = grid
        self.mu = setup.mu_n
        self.coef, self.dcoef_p, self.dcoef_q = _harmonic_faces(grid, a)
        self.K = (self.mu * grid.stiffness(self.coef)).tocsr()
        mask = grid.dirichlet_mask
        self.D = np.flatnonzero(mask)
        self.F = np.flatnonzero(~mask)
        self.K_FF = self.K[self.F][:, self.F].tocsc()
        self.K_FD = self.K[self.F][:, self.D]
        self.lu = spla.splu(self.K_FF)

    def solve_free(self, rhs):
        sol = self.lu.solve(rhs)
        check_residual(self.K_FF, sol, rhs, "state solve")
        return sol

    def solve(self, dirichlet_values, source=None):
        u = np.zeros(self.grid.n_nodes)
        u[self.D] = dirichlet_values
        rhs = -(self.K_FD @ dirichlet_values)
        if source is not None:
            rhs = rhs - (self.grid.mass * source)[self.F]
        u[self.F] = self.solve_free(rhs)
        return u

    def dK_apply(self, dv, u):
        """(dK[v]) u, the coefficient perturbation applied to a state."""
        p, q, w = self.grid.faces
        dc = self.mu * w * (self.dcoef_p * dv[p] + self.dcoef_q * dv[q]) * (u[q] - u[p])
        out = np.zeros(self.grid.n_nodes)
        np.subtract.at(out, p, dc)
        np.add.at(out, q, dc)
        return out

    def gradient_pairing(self, psi, u):
        """Nodal functional v -> psi^T dK[v] u (discrete grad psi . grad u)."""
        p, q, w = self.grid.faces
        prod = self.mu * w * (psi[q] - psi[p]) * (u[q] - u[p])
        out = np.zeros(self.grid.n_nodes)
        np.add.at(out, p, self.dcoef_p * prod)
        np.add.at(out, q, self.dcoef_q * prod)
        return out


def solve_state(setup: EllipticSetup, a: GridFunction, dirichlet_data,
                source: Optional[GridFunction] = None) -> GridFunction:
    """Solve div(mu_n a grad u) = source with u = dirichlet_data on the Dirichlet part."""
    _check_bounds(setup, a.values)
    st = _State(setup, a.values)
    f = None if source is None else source.values
    return GridFunction(setup.grid, st.solve(_dirichlet_values(setup.grid, dirichlet_data), f))


def normal_derivative_matrix(setup: EllipticSetup):
    """Sparse map u -> outward du/dnu at the measurement nodes.

    Second-order one-sided differences along each side of the square that
    the measurement segment covers at the node; at a corner shared by two
    measured sides the two normal derivatives are averaged.
    """
    grid = setup.grid
    nx, ny = grid.nx, grid.ny
    nodes = setup.measurement_nodes
    inside = np.zeros(grid.n_nodes, dtype=bool)
    inside[nodes] = True
    rows, cols, vals = [], [], []
    for row, b in enumerate(nodes):
        j, i = divmod(int(b), nx + 1)
        stencils = []
        # (side test, tangential neighbours, inward step in (di, dj), h)
        for on_side, nbrs, (di, dj), h in (
                (j == 0, [(i - 1, j), (i + 1, j)], (0, 1), grid.hy),
                (j == ny, [(i - 1, j), (i + 1, j)], (0, -1), grid.hy),
                (i == 0, [(i, j - 1), (i, j + 1)], (1, 0), grid.hx),
                (i == nx, [(i, j - 1), (i, j + 1)], (-1, 0), grid.hx)):
            if not on_side:
                continue
            if not any(0 <= ti <= nx and 0 <= tj <= ny and inside[grid.index(ti, tj)]
                       for ti, tj in nbrs):
                continue
            stencils.append(([grid.index(i, j), grid.index(i + di, j + dj),
                              grid.index(i + 2 * di, j + 2 * dj)],
                             np.array([3.0, -4.0, 1.0]) / (2 * h)))
        if not stencils:
            raise ValueError(f"measurement node {b} has no measured side")
        for idx, coef in stencils:
            rows += [row] * 3
            cols += idx
            vals += list(coef / len(stencils))
    return sps.csr_matrix((vals, (rows, cols)), shape=(nodes.size, grid.n_nodes))


def _flux(setup, st, u, a, Dn=None):
    nodes = setup.measurement_nodes
    if setup.flux == "variational":
        return (st.K @ u)[nodes] / setup.measurement_weights
    if Dn is None:
        Dn = normal_derivative_matrix(setup)
    return setup.mu_n * a[nodes] * (Dn @ u)


@dataclass(frozen=True, eq=False)
class EllipticState:
    a: GridFunction
    u: GridFunction
    flux_trace: BoundaryTrace


def forward_state(setup: EllipticSetup, a: GridFunction) -> EllipticState:
    """State for Dirichlet data -U and its flux trace mu_n a du/dnu on Gamma1."""
    _check_bounds(setup, a.values)
    st = _State(setup, a.values)
    u = st.solve(-_dirichlet_values(setup.grid, setup.dirichlet_source))
    flux = BoundaryTrace(setup.grid, setup.measurement_segment, _flux(setup, st, u, a.values))
    return EllipticState(a, GridFunction(setup.grid, u), flux)


def dtn_forward(setup: EllipticSetup, a: GridFunction) -> BoundaryTrace:
    """Boundary flux mu_n a du/dnu on Gamma1 for the state with data -U."""
    return forward_state(setup, a).flux_trace


class EllipticOperator(ForwardOperator):
    """a -> flux trace on Gamma1, X = discrete H1 with fixed Dirichlet trace.

    The adjoint is the exact adjoint of the discrete derivative: an adjoint
    state Psi is solved with the state matrix, the nodal functional of the
    edge products grad Psi . grad u is formed and lifted to H1 by the Riesz
    map with W = 0 on the Dirichlet part.

    ``scale`` multiplies the data; it changes nothing for the scale-invariant
    members of the family but sets the derivative bound C seen by Landweber.
    """

    def __init__(self, setup: EllipticSetup, scale: float = 1.0):
        self.setup = setup
        self.scale = float(scale)
        self.domain_box = tuple(setup.a_bounds)
        self._weights = setup.measurement_weights
        self._nodes = setup.measurement_nodes
        self._free_mask = ~setup.grid.dirichlet_mask
        self._riesz = RieszH1(setup.grid)
        self._U = _dirichlet_values(setup.grid, setup.dirichlet_source)
        self._Dn = normal_derivative_matrix(setup) if setup.flux == "one-sided" else None

    def inner_x(self, u, v):
        return self.setup.grid.h1(u, v)

    def inner_y(self, p, q):
        return float(np.dot(p, self._weights * q))

    def tangent(self, v):
        return np.where(self._free_mask, v, 0.0)

    def state(self, x):
        self.check_domain(x)
        st = _State(self.setup, x)
        return st, st.solve(-self._U)

    def linearize(self, x):
        x = np.asarray(x, dtype=float)
        st, u = self.state(x)
        nodes, c = self._nodes, self.scale
        fx = c * _flux(self.setup, st, u, x, self._Dn)
        F = st.F

        def forward(v):
            t = st.dK_apply(v, u)
            du = np.zeros_like(u)
            du[F] = -st.solve_free(t[F])
            if self._Dn is None:
                return c * (t + st.K @ du)[nodes] / self._weights
            mu = self.setup.mu_n
            return c * mu * (v[nodes] * (self._Dn @ u) + x[nodes] * (self._Dn @ du))

        def adjoint(psi):
            Psi = self._adjoint_state(st, x, psi)
            return self._riesz.solve(c * st.gradient_pairing(Psi, u))

        return fx, Linearization(forward, adjoint)

    def _adjoint_state(self, st, x, psi):
        n = self.setup.grid.n_nodes
        if self._Dn is None:
            # Psi = psi on Gamma1, 0 on Gamma0, homogeneous equation elsewhere
            bvals = np.zeros(n)
            bvals[self._nodes] = psi
            return st.solve(bvals[st.D])
        # Psi = 0 on the Dirichlet part; K_FF Psi_F = -(Dn^T (mu a psi w))_F
        load = self._Dn.T @ (self.setup.mu_n * x[self._nodes] * self._weights * psi)
        Psi = np.zeros(n)
        Psi[st.F] = -st.solve_free(load[st.F])
        return Psi

    def adjoint_state(self, x, psi):
        """Adjoint state for the data-space element ``psi``."""
        x = np.asarray(x, dtype=float)
        st, _ = self.state(x)
        return self._adjoint_state(st, x, psi)

    def l2_gradient(self, x, psi):
        """The L2 density grad Psi . grad u (nodal functional over mass)."""
        x = np.asarray(x, dtype=float)
        st, u = self.state(x)
        r = self.scale * st.gradient_pairing(self._adjoint_state(st, x, psi), u)
        return np.where(self._free_mask, r, 0.0) / self.setup.grid.mass


def adjoint_gradient(setup: EllipticSetup, a_k: GridFunction, residual: BoundaryTrace,
                     scale: float = 1.0) -> GridFunction:
    """H1 Riesz representative W of v -> <residual, F'(a_k) v> on Gamma1."""
    op = EllipticOperator(setup, scale)
    return GridFunction(setup.grid, op.adjoint_apply(a_k.values, residual.values))


def make_initial_guess(setup: EllipticSetup, boundary=None, clamp: bool = True) -> GridFunction:
    """Discrete harmonic extension of a Dirichlet trace (Neumann sides natural).

    ``boundary`` defaults to the setup's Dirichlet source; pass the known
    boundary trace of the coefficient to get an admissible starting point.
    """
    grid = setup.grid
    data = setup.dirichlet_source if boundary is None else boundary
    vals = _dirichlet_values(grid, data)
    K = grid.stiffness().tocsr()
    mask = grid.dirichlet_mask
    D, F = np.flatnonzero(mask), np.flatnonzero(~mask)
    A = K[F][:, F].tocsc()
    rhs = -(K[F][:, D] @ vals)
    a0 = np.empty(grid.n_nodes)
    a0[D] = vals
    a0[F] = spla.spsolve(A, rhs)
    check_residual(A, a0[F], rhs, "harmonic extension")
    if clamp:
        a_m, a_M = setup.a_bounds
        if a0.min() < a_m or a0.max() > a_M:
            warnings.warn("initial guess clamped into the coefficient bounds", stacklevel=2)
            a0 = np.clip(a0, a_m, a_M)
    return GridFunction(grid, a0)


def dirichlet_energy(a: GridFunction) -> float:
    return float(a.values @ (a.grid.stiffness() @ a.values))


def _second_difference(f, h, axis):
    f = np.moveaxis(f, axis, 0)
    d = np.empty_like(f)
    d[1:-1] = f[:-2] - 2 * f[1:-1] + f[2:]
    d[0] = 2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]
    d[-1] = 2 * f[-1] - 5 * f[-2] + 4 * f[-3] - f[-4]
    return np.moveaxis(d / (h * h), 0, axis)


def laplacian(u: GridFunction) -> GridFunction:
    """5-point Laplacian, second-order one-sided stencils on the boundary."""
    g = u.grid
    arr = u.as_array()
    return GridFunction(g, _second_difference(arr, g.hx, 1) + _second_difference(arr, g.hy, 0))


def doping_postprocess(a: GridFunction, lambda_debye: float) -> GridFunction:
    """Doping profile C = a - 1/a - lambda^2 Laplace(ln a)."""
    if np.any(a.values <= 0):
        raise DomainError("doping profile needs a strictly positive coefficient")
    lap = laplacian(GridFunction(a.grid, np.log(a.values))).values
    return GridFunction(a.grid, a.values - 1.0 / a.values - lambda_debye ** 2 * lap)


def _smooth_step(t, width):
    return 0.5 * (1.0 + np.tanh(t / width))


def make_phantom(setup: EllipticSetup, kind: str = "smooth-bump", amplitude: float = 0.5,
                 width: float = 25.0) -> GridFunction:
    """Synthetic coefficient a* with values in [1, 1 + amplitude].

    ``smooth-bump`` is ``1 + amplitude * exp(-width |x - (1/2, 1/2)|^2)``;
    ``piecewise-junction`` a smoothed rectangular high region, the analogue
    of an n-doped well (``width`` unused).
    """
    if amplitude < 0:
        raise ValueError("phantom amplitude must be nonnegative")
    if kind == "smooth-bump":
        f = lambda x, y: 1.0 + amplitude * np.exp(-width * ((x - 0.5) ** 2 + (y - 0.5) ** 2))
    elif kind == "piecewise-junction":
        def f(x, y):
            sx = _smooth_step(x - 0.3, 0.03) * _smooth_step(0.7 - x, 0.03)
            sy = _smooth_step(y - 0.3, 0.03) * _smooth_step(0.65 - y, 0.03)
            return 1.0 + amplitude * sx * sy
    else:
        raise ValueError(f"unknown phantom {kind!r}")
    a = GridFunction.from_function(setup.grid, f)
    _check_bounds(setup, a.values)
    return a


def restrict_trace(values: np.ndarray, fine: EllipticSetup, coarse: EllipticSetup) -> np.ndarray:
    """Sample a fine-grid measurement trace at the coarse measurement nodes."""
    fg, cg = fine.grid, coarse.grid
    if fg.nx % cg.nx or fg.ny % cg.ny:
        raise ValueError("fine grid must refine the coarse grid by an integer factor")
    rx, ry = fg.nx // cg.nx, fg.ny // cg.ny
    full = np.full(fg.n_nodes, np.nan)
    full[fine.measurement_nodes] = values
    cj, ci = np.divmod(coarse.measurement_nodes, cg.nx + 1)
    out = full[fg.index(ci * rx, cj * ry)]
    if np.isnan(out).any():
        raise ValueError("coarse measurement nodes are not measured on the fine grid")
    return out


@dataclass
class EllipticProblem:
    setup: EllipticSetup
    op: EllipticOperator
    y: np.ndarray
    a_star: np.ndarray
    a0: np.ndarray


def build_problem(kind: str = "calderon", n: int = 32, data_n: int = 64,
                  phantom: str = "smooth-bump", a_bounds=(0.1, 10.0),
                  normalize: bool = True, amplitude: float = 0.5,
                  width: float = 25.0, flux: str = "one-sided") -> EllipticProblem:
    """Inversion grid ``n``, synthetic data from the finer grid ``data_n``.

    With ``normalize`` the data are scaled so that |F'(a0)| = 1, and the
    operator declares C = 1.
    """
    setup = make_setup(kind, n, a_bounds, flux=flux)
    a_star = make_phantom(setup, phantom, amplitude, width)
    trace = BoundaryTrace(setup.grid, "dirichlet", a_star.values[setup.grid.segment("dirichlet")])
    a0 = make_initial_guess(setup, trace)
    if data_n == n:
        y = dtn_forward(setup, a_star).values
    else:
        fine = make_setup(kind, data_n, a_bounds, flux=flux)
        y = restrict_trace(dtn_forward(fine, make_phantom(fine, phantom, amplitude, width)).values, fine, setup)
    op = EllipticOperator(setup)
    if normalize:
        scale = 1.0 / estimate_derivative_norm(op, a0.values, n_iter=50, seed=0)
        op = EllipticOperator(setup, scale)
        op.C = 1.0
        y = scale * y
    op.set_ball(a0.values, np.inf)
    return EllipticProblem(setup, op, y, a_star.values, a0.values)
