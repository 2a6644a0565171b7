"""Finite-difference solver for the exit boundary-value problem in d <= 2.

Solves ``(eps/2) a : D^2 f + b . grad f = 0`` in the domain with
``f = exp(-Phi/eps)`` on the boundary, so ``f(x) = E exp(-Phi(x(tau))/eps)``.
Second derivatives are central; first derivatives are central unless the
cell Peclet number ``|b_i| h / D_ii`` (with ``D = eps a / 2``) exceeds 2, in
which case the upwind one-sided difference is used for that direction.

In 2D the domain is rasterized on a uniform grid. Grid nodes outside the
domain that neighbor an interior node carry Dirichlet data taken at their
radial projection onto the boundary (snapping, O(h) geometry error).
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RegularGridInterpolator

from .action import hamiltonian
from .errors import GeometryError, PositivityError, SolverError
from .system import closed_loop_drift, diffusion_matrix


@dataclass(frozen=True, eq=False)
class Grid1D:
    lower: float
    upper: float
    n: int

    def __post_init__(self):
        if not self.upper > self.lower:
            raise GeometryError("grid needs lower < upper")
        if self.n < 11:
            raise GeometryError("grid needs at least 10 interior nodes")

    @classmethod
    def for_domain(cls, domain, h):
        if domain.dim != 1:
            raise GeometryError("Grid1D needs a one-dimensional domain")
        n = int(round((domain.upper - domain.lower) / h))
        return cls(float(domain.lower), float(domain.upper), n)

    @property
    def h(self):
        return (self.upper - self.lower) / self.n

    @property
    def nodes(self):
        return np.linspace(self.lower, self.upper, self.n + 1)[:, None]

    @property
    def shape(self):
        return (self.n + 1,)


@dataclass(frozen=True, eq=False)
class Grid2D:
    """Uniform grid over a box around the domain; ``mask`` marks interior nodes."""

    x: np.ndarray
    y: np.ndarray
    mask: np.ndarray
    ghost: np.ndarray
    ghost_points: np.ndarray
    h: float

    @classmethod
    def for_domain(cls, domain, h):
        if domain.dim != 2:
            raise GeometryError("Grid2D needs a two-dimensional domain")
        lo, hi = domain.bounding_box()
        lo = lo - 2 * h
        hi = hi + 2 * h
        nx = int(math.ceil((hi[0] - lo[0]) / h))
        ny = int(math.ceil((hi[1] - lo[1]) / h))
        x = lo[0] + h * np.arange(nx + 1)
        y = lo[1] + h * np.arange(ny + 1)
        X, Y = np.meshgrid(x, y, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
        mask = domain.contains(pts).reshape(X.shape)
        if mask[:, 1:-1].any(axis=1).sum() < 10 or mask[1:-1].any(axis=0).sum() < 10:
            raise GeometryError("grid needs at least 10 interior nodes per axis")
        near = np.zeros_like(mask)
        near[1:] |= mask[:-1]
        near[:-1] |= mask[1:]
        near[:, 1:] |= mask[:, :-1]
        near[:, :-1] |= mask[:, 1:]
        near[1:, 1:] |= mask[:-1, :-1]
        near[:-1, :-1] |= mask[1:, 1:]
        near[1:, :-1] |= mask[:-1, 1:]
        near[:-1, 1:] |= mask[1:, :-1]
        ghost = near & ~mask
        gp = np.full(X.shape + (2,), np.nan)
        g = np.column_stack([X[ghost], Y[ghost]])
        gp[ghost] = domain.ray_boundary(g - domain.center)
        return cls(x, y, mask, ghost, gp, float(h))

    @property
    def nodes(self):
        X, Y = np.meshgrid(self.x, self.y, indexing="ij")
        return np.stack([X, Y], axis=-1)

    @property
    def shape(self):
        return self.mask.shape


@dataclass(frozen=True, eq=False)
class FieldSolution:
    """Nodal field on a grid: ``kind`` is "f" (exit functional) or "J" (= -eps log f).

    ``values`` has the grid's shape. Interior and boundary-data nodes are
    filled; other nodes are NaN.
    """

    grid: object
    values: np.ndarray
    eps: float
    mode: int
    kind: str
    interior: np.ndarray
    boundary: np.ndarray
    boundary_phi: np.ndarray
    domain: object = None
    info: dict = field(default_factory=dict)

    def at(self, x):
        """Linear (1D) or bilinear (2D) interpolation of the field at points ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if isinstance(self.grid, Grid1D):
            return np.interp(x[:, 0], self.grid.nodes[:, 0], self.values)
        interp = RegularGridInterpolator((self.grid.x, self.grid.y), self.values,
                                         bounds_error=False, fill_value=np.nan)
        return interp(x)


def _boundary_data(domain, grid, phi, eps):
    if isinstance(grid, Grid1D):
        bnd = np.zeros(grid.shape, dtype=bool)
        bnd[[0, -1]] = True
        pts = grid.nodes[bnd]
    else:
        bnd = grid.ghost
        pts = grid.ghost_points[bnd]
    ph = np.asarray(phi(pts), dtype=float) if phi is not None else np.zeros(len(pts))
    if np.any(ph < 0) or np.any(np.isnan(ph)):
        raise ValueError("terminal cost must be nonnegative")
    with np.errstate(over="ignore"):
        fb = np.where(np.isinf(ph), 0.0, np.exp(-ph / eps))
    return bnd, ph, fb


def _direction_weights(b, D, h):
    """Stencil weights (minus, center, plus) for ``D u'' + b u'`` in one direction."""
    pe = np.abs(b) * h / np.maximum(D, 1e-300)
    up = pe > 2.0 * (1.0 + 1e-9)  # ties at exactly 2 stay central on both sides
    wm = D / h**2 + np.where(up, np.where(b < 0, -b / h, 0.0), -b / (2 * h))
    wp = D / h**2 + np.where(up, np.where(b > 0, b / h, 0.0), b / (2 * h))
    wc = -2.0 * D / h**2 - np.where(up, np.abs(b) / h, 0.0)
    return wm, wc, wp, up


def solve_exit_bvp(sys, mode, eps, domain, grid, phi=None):
    """Solve the exit boundary-value problem for ``f`` on ``grid``.

    ``phi`` maps (m, d) boundary points to nonnegative costs (``inf`` gives f = 0);
    ``None`` means zero cost.
    """
    if sys.d > 2:
        raise GeometryError("PDE cross-checks are limited to d <= 2")
    if not eps > 0:
        raise ValueError("eps must be positive")
    bnd, ph, fb = _boundary_data(domain, grid, phi, eps)
    shape = grid.shape
    if isinstance(grid, Grid1D):
        interior = np.zeros(shape, dtype=bool)
        interior[1:-1] = True
    else:
        interior = grid.mask
    pts = grid.nodes.reshape(-1, sys.d)[interior.ravel()]
    a = diffusion_matrix(sys, pts)
    b = closed_loop_drift(sys, mode, pts)
    h = grid.h
    D = 0.5 * eps * a
    idx = -np.ones(shape, dtype=np.int64)
    idx[interior] = np.arange(interior.sum())
    full = np.full(shape, np.nan)
    full[bnd] = fb
    ijs = np.argwhere(interior)
    n = len(ijs)
    rows, cols, vals = [], [], []
    rhs = np.zeros(n)
    me = np.arange(n)

    def couple(offset, w):
        nb = ijs + np.asarray(offset)
        nb_t = tuple(nb.T)
        k = idx[nb_t]
        inner = k >= 0
        rows.append(me[inner])
        cols.append(k[inner])
        vals.append(w[inner])
        bv = full[nb_t][~inner]
        if np.any(np.isnan(bv)):
            raise GeometryError("stencil reaches a node without boundary data")
        np.subtract.at(rhs, me[~inner], w[~inner] * bv)

    diag = np.zeros(n)
    upwinded = 0
    for i in range(sys.d):
        wm, wc, wp, up = _direction_weights(b[:, i], D[:, i, i], h)
        upwinded += int(up.sum())
        e = np.zeros(sys.d, dtype=np.int64)
        e[i] = 1
        couple(-e, wm)
        couple(e, wp)
        diag += wc
    if sys.d == 2:
        w = 2.0 * D[:, 0, 1] / (4 * h * h)
        if np.any(w != 0):
            couple((1, 1), w)
            couple((-1, -1), w)
            couple((1, -1), -w)
            couple((-1, 1), -w)
    rows.append(me)
    cols.append(me)
    vals.append(diag)
    A = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    try:
        lu = spla.splu(A)
        sol = lu.solve(rhs)
    except RuntimeError as exc:
        raise SolverError(f"sparse factorization failed: {exc}",
                          condition_estimate=math.inf) from exc
    cond = _condition_estimate(A, lu)
    if not np.all(np.isfinite(sol)) or cond > 1e14:
        raise SolverError(f"ill-conditioned system (condition ~ {cond:.3g})", condition_estimate=cond)
    full[interior] = sol
    res = A @ sol - rhs
    info = {"h": h, "nodes": n, "upwinded": upwinded, "condition_estimate": cond,
            "linear_residual": float(np.max(np.abs(res))) if n else 0.0}
    phi_full = np.full(shape, np.nan)
    phi_full[bnd] = ph
    return FieldSolution(grid, full, float(eps), mode, "f", interior, bnd, phi_full, domain, info)


def _condition_estimate(A, lu):
    n = A.shape[0]
    inv = spla.LinearOperator((n, n), matvec=lu.solve, rmatvec=lambda v: lu.solve(v, trans="T"),
                              dtype=float)
    return float(spla.onenormest(A) * spla.onenormest(inv))


def log_transform(field):
    """``J = -eps log f`` nodewise; boundary nodes with finite cost get ``J = Phi`` exactly."""
    if field.kind != "f":
        raise ValueError("log_transform expects an f field")
    f = field.values
    used = field.interior | field.boundary
    finite_phi = field.boundary & np.isfinite(field.boundary_phi)
    bad = used & ~(f > 0) & ~(field.boundary & np.isinf(field.boundary_phi))
    if np.any(bad):
        k = tuple(np.argwhere(bad)[0])
        raise PositivityError(f"nonpositive f = {f[k]:.3g} at node {k}; the BVP solve failed")
    J = np.full(f.shape, np.nan)
    with np.errstate(divide="ignore"):
        J[used] = -field.eps * np.log(f[used])
    J[finite_phi] = field.boundary_phi[finite_phi]
    J[field.boundary & np.isinf(field.boundary_phi)] = np.inf
    return replace(field, values=J, kind="J")


@dataclass(frozen=True)
class ResidualReport:
    max_abs: float
    rms: float
    nodes: int
    h: float

    def as_dict(self):
        return {"max_abs": self.max_abs, "rms": self.rms, "nodes": self.nodes, "h": self.h}


def hjb_residual(J_field, sys, mode, eps=None, band=0.0):
    """Residual of ``(eps/2) a : D^2 J + H(x, grad J)`` at interior nodes, central differences.

    Nodes whose stencil touches a non-finite value are skipped, as are nodes
    closer than ``band`` to the boundary. Near a boundary piece with f = 0 the
    field J has a logarithmic singularity, and in 2D the snapped boundary
    data is only O(h) accurate, so a fixed band is needed for the residual
    to converge under refinement.
    """
    if J_field.kind != "J":
        raise ValueError("hjb_residual expects a J field")
    eps = J_field.eps if eps is None else eps
    J = J_field.values
    h = J_field.grid.h
    d = sys.d
    nodes = J_field.grid.nodes.reshape(-1, d)
    inner = J_field.interior.copy()
    if band > 0:
        if J_field.domain is None:
            raise ValueError("band exclusion needs the field's domain")
        sd = np.full(inner.shape, -np.inf)
        sd[inner] = J_field.domain.signed_distance(nodes[inner.ravel()])
        inner &= sd <= -band
    ijs = np.argwhere(inner)

    def val(off):
        nb = ijs + np.asarray(off)
        ok = np.all((nb >= 0) & (nb < np.array(J.shape)), axis=1)
        out = np.full(len(ijs), np.nan)
        out[ok] = J[tuple(nb[ok].T)]
        return out

    c = val(np.zeros(d, dtype=np.int64))
    grad = np.zeros((len(ijs), d))
    hess = np.zeros((len(ijs), d, d))
    for i in range(d):
        e = np.zeros(d, dtype=np.int64)
        e[i] = 1
        jp, jm = val(e), val(-e)
        grad[:, i] = (jp - jm) / (2 * h)
        hess[:, i, i] = (jp - 2 * c + jm) / h**2
    if d == 2:
        m = (val((1, 1)) - val((1, -1)) - val((-1, 1)) + val((-1, -1))) / (4 * h * h)
        hess[:, 0, 1] = hess[:, 1, 0] = m
    x = nodes[np.ravel_multi_index(tuple(ijs.T), J.shape)]
    ok = np.isfinite(grad).all(axis=1) & np.isfinite(hess).all(axis=(1, 2))
    x, grad, hess = x[ok], grad[ok], hess[ok]
    if len(x) == 0:
        return ResidualReport(0.0, 0.0, 0, h)
    a = diffusion_matrix(sys, x)
    r = 0.5 * eps * np.einsum("nij,nij->n", a, hess) + hamiltonian(sys, mode, x, grad)
    return ResidualReport(float(np.max(np.abs(r))), float(np.sqrt(np.mean(r * r))), len(r), h)
