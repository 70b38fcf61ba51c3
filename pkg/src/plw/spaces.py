"""Scalar fields on a uniform node-centred grid of the unit square.

Nodes are numbered row-major with ``y`` as the slow index, i.e. node
``(i, j)`` at ``(i * hx, j * hy)`` has flat index ``j * (nx + 1) + i``.

All quadratures are built from the same tensor trapezoidal weights.  The
gradient part of the H1 product is evaluated on grid edges (one difference
per edge, trapezoidal weight in the tangential direction), which makes the
discrete H1 form exactly the bilinear form of the 5-point Laplacian with
natural boundary conditions.  That identity is what lets :func:`riesz_h1`
satisfy its variational characterisation to solver precision.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .errors import DimensionError, SolverError

INTERIOR, GAMMA0, GAMMA1, NEUMANN = 0, 1, 2, 3

PARTITIONS = ("calderon", "semiconductor")

SOLVER_RTOL = 1e-10


@dataclass(frozen=True)
class Grid2D:
    """Uniform grid with ``nx`` by ``ny`` cells on the unit square.

    ``partition`` selects the boundary labelling:

    ``"calderon"``
        every boundary node belongs to Gamma1 (Dirichlet and measured).
    ``"semiconductor"``
        bottom edge is Gamma0, top edge is Gamma1 (both including the
        corners), the remaining left/right nodes are Neumann.
    """

    nx: int
    ny: int
    partition: str = "calderon"

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError("grid needs at least 4 cells per axis")
        if self.partition not in PARTITIONS:
            raise ValueError(f"unknown boundary partition {self.partition!r}")

    @property
    def hx(self) -> float:
        return 1.0 / self.nx

    @property
    def hy(self) -> float:
        return 1.0 / self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny + 1, self.nx + 1)

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    def index(self, i, j):
        return np.asarray(j) * (self.nx + 1) + np.asarray(i)

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.linspace(0.0, 1.0, self.nx + 1)
        y = np.linspace(0.0, 1.0, self.ny + 1)
        xx, yy = np.meshgrid(x, y)
        return xx.ravel(), yy.ravel()

    @cached_property
    def _ij(self) -> tuple[np.ndarray, np.ndarray]:
        jj, ii = np.divmod(np.arange(self.n_nodes), self.nx + 1)
        return ii, jj

    @cached_property
    def labels(self) -> np.ndarray:
        ii, jj = self._ij
        lab = np.full(self.n_nodes, INTERIOR, dtype=np.int8)
        on_boundary = (ii == 0) | (ii == self.nx) | (jj == 0) | (jj == self.ny)
        if self.partition == "calderon":
            lab[on_boundary] = GAMMA1
        else:
            lab[on_boundary] = NEUMANN
            lab[jj == 0] = GAMMA0
            lab[jj == self.ny] = GAMMA1
        return lab

    @property
    def boundary_mask(self) -> np.ndarray:
        return self.labels != INTERIOR

    @property
    def dirichlet_mask(self) -> np.ndarray:
        return (self.labels == GAMMA0) | (self.labels == GAMMA1)

    # -- quadrature -------------------------------------------------------

    @cached_property
    def _wx(self) -> np.ndarray:
        w = np.full(self.nx + 1, self.hx)
        w[[0, -1]] *= 0.5
        return w

    @cached_property
    def _wy(self) -> np.ndarray:
        w = np.full(self.ny + 1, self.hy)
        w[[0, -1]] *= 0.5
        return w

    @cached_property
    def mass(self) -> np.ndarray:
        """Trapezoidal area weight of every node."""
        return np.outer(self._wy, self._wx).ravel()

    @cached_property
    def faces(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Grid edges as ``(p, q, weight)`` with ``q`` the upper/right node.

        ``weight * (u[q] - u[p]) * (v[q] - v[p])`` summed over all edges is
        the quadrature of ``grad u . grad v``.
        """
        ii, jj = self._ij
        xm = ii < self.nx
        px = np.flatnonzero(xm)
        wxf = self._wy[jj[px]] / self.hx
        ym = jj < self.ny
        py = np.flatnonzero(ym)
        wyf = self._wx[ii[py]] / self.hy
        p = np.concatenate([px, py])
        q = np.concatenate([px + 1, py + self.nx + 1])
        return p, q, np.concatenate([wxf, wyf])

    def stiffness(self, face_coef: Optional[np.ndarray] = None) -> sps.csr_matrix:
        """Matrix of ``(u, v) -> sum_f w_f c_f du_f dv_f``."""
        p, q, w = self.faces
        c = w if face_coef is None else w * face_coef
        rows = np.concatenate([p, q, p, q])
        cols = np.concatenate([p, q, q, p])
        vals = np.concatenate([c, c, -c, -c])
        n = self.n_nodes
        return sps.csr_matrix((vals, (rows, cols)), shape=(n, n))

    @cached_property
    def gram_h1(self) -> sps.csr_matrix:
        return (sps.diags(self.mass) + self.stiffness()).tocsr()

    def l2(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(np.dot(u, self.mass * v))

    def h1(self, u: np.ndarray, v: np.ndarray) -> float:
        p, q, w = self.faces
        return self.l2(u, v) + float(np.dot(w * (u[q] - u[p]), v[q] - v[p]))

    # -- boundary segments ------------------------------------------------

    def segment(self, name: str) -> np.ndarray:
        """Flat node indices of a boundary segment, sorted ascending."""
        ii, jj = self._ij
        lab = self.labels
        masks = {
            "boundary": lab != INTERIOR,
            "bottom": jj == 0,
            "top": jj == self.ny,
            "left": ii == 0,
            "right": ii == self.nx,
            "gamma0": lab == GAMMA0,
            "gamma1": lab == GAMMA1,
            "neumann": lab == NEUMANN,
            "dirichlet": (lab == GAMMA0) | (lab == GAMMA1),
        }
        try:
            return np.flatnonzero(masks[name])
        except KeyError:
            raise ValueError(f"unknown boundary segment {name!r}") from None

    @cached_property
    def _perimeter_edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        nx, ny = self.nx, self.ny
        i = np.arange(nx)
        j = np.arange(ny)
        p = np.concatenate([self.index(i, 0), self.index(i, ny),
                            self.index(0, j), self.index(nx, j)])
        q = np.concatenate([self.index(i + 1, 0), self.index(i + 1, ny),
                            self.index(0, j + 1), self.index(nx, j + 1)])
        length = np.concatenate([np.full(2 * nx, self.hx), np.full(2 * ny, self.hy)])
        return p, q, length

    def segment_weights(self, name: str) -> np.ndarray:
        """Trapezoidal line weights for the nodes of ``segment(name)``.

        Only perimeter edges with both end points in the segment count.
        """
        nodes = self.segment(name)
        inside = np.zeros(self.n_nodes, dtype=bool)
        inside[nodes] = True
        p, q, length = self._perimeter_edges
        keep = inside[p] & inside[q]
        w = np.zeros(self.n_nodes)
        np.add.at(w, p[keep], 0.5 * length[keep])
        np.add.at(w, q[keep], 0.5 * length[keep])
        return w[nodes]


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).ravel()
        if vals.size != self.grid.n_nodes:
            raise DimensionError(
                f"expected {self.grid.n_nodes} nodal values, got {vals.size}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid function has non-finite entries")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: Grid2D, f: Callable) -> "GridFunction":
        x, y = grid.coords
        return cls(grid, np.broadcast_to(f(x, y), x.shape).astype(float))

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)


@dataclass(frozen=True, eq=False)
class BoundaryTrace:
    grid: Grid2D
    segment: str
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).ravel()
        n = self.grid.segment(self.segment).size
        if vals.size != n:
            raise DimensionError(
                f"segment {self.segment!r} has {n} nodes, got {vals.size} values")
        if not np.all(np.isfinite(vals)):
            raise ValueError("boundary trace has non-finite entries")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: Grid2D, segment: str, f: Callable) -> "BoundaryTrace":
        x, y = grid.coords
        nodes = grid.segment(segment)
        return cls(grid, segment, np.broadcast_to(f(x[nodes], y[nodes]), nodes.shape))

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.segment(self.segment)


def _same_grid(u, v):
    if u.grid != v.grid:
        raise DimensionError(f"grid mismatch: {u.grid} vs {v.grid}")


def inner_l2(u: GridFunction, v: GridFunction) -> float:
    """Trapezoidal approximation of the L2(Omega) product."""
    _same_grid(u, v)
    return u.grid.l2(u.values, v.values)


def inner_h1(u: GridFunction, v: GridFunction) -> float:
    """Discrete H1(Omega) product: L2 term plus edge-difference gradients."""
    _same_grid(u, v)
    return u.grid.h1(u.values, v.values)


def boundary_inner_l2(p: BoundaryTrace, q: BoundaryTrace) -> float:
    _same_grid(p, q)
    if p.segment != q.segment:
        raise DimensionError(f"segment mismatch: {p.segment!r} vs {q.segment!r}")
    w = p.grid.segment_weights(p.segment)
    return float(np.dot(p.values, w * q.values))


def check_residual(A, x, b, what="linear solve"):
    r = np.linalg.norm(A @ x - b)
    nb = np.linalg.norm(b)
    if not np.isfinite(r) or r > SOLVER_RTOL * max(nb, 1e-300):
        if nb == 0.0 and r == 0.0:
            return
        raise SolverError(f"{what}: relative residual {r / max(nb, 1e-300):.2e}")


class RieszH1:
    """Factorised H1 Riesz map with homogeneous Dirichlet data on a mask.

    ``solve(r)`` returns the field ``W`` vanishing on the mask with
    ``h1(W, v) = r . v`` for every ``v`` vanishing on the mask, where ``r``
    is a functional given by its nodal (Euclidean) representation.
    """

    def __init__(self, grid: Grid2D, dirichlet: Optional[np.ndarray] = None):
        self.grid = grid
        mask = grid.dirichlet_mask if dirichlet is None else np.asarray(dirichlet, bool)
        self.free = np.flatnonzero(~mask)
        self._A = grid.gram_h1[self.free][:, self.free].tocsc()
        self._lu = spla.splu(self._A)

    def solve(self, functional: np.ndarray) -> np.ndarray:
        rhs = functional[self.free]
        wf = self._lu.solve(rhs)
        check_residual(self._A, wf, rhs, "H1 Riesz solve")
        w = np.zeros(self.grid.n_nodes)
        w[self.free] = wf
        return w


def riesz_h1(g: GridFunction, dirichlet: Optional[np.ndarray] = None) -> GridFunction:
    """Solve ``(I - Laplace) W = g`` with the 5-point stencil.

    ``W = 0`` on the Dirichlet nodes (default: the grid's Dirichlet part,
    or pass a boolean node mask), natural Neumann conditions elsewhere.
    """
    grid = g.grid
    return GridFunction(grid, RieszH1(grid, dirichlet).solve(grid.mass * g.values))
