"""Bounded convex domains and named boundary sections.

Three kinds are supported: an interval (d = 1), an ellipsoid
``(x - c)^T Q (x - c) < 1`` and a convex polytope ``H x < h``. All are
star-shaped about ``center``, so boundary points are produced by casting
rays from the center; this gives one parametrization used for sampling,
histograms and arc length.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import linprog
from scipy.stats import qmc

from .errors import DomainError, GeometryError

SECTION_KINDS = ("full", "halfspace-cap", "point-ball")
DOMAIN_KINDS = ("interval", "ellipsoid", "polytope")


@dataclass(frozen=True)
class BoundarySection:
    """A closed piece of the boundary.

    ``halfspace-cap`` keeps boundary points with ``<normal, y - center> >= offset``;
    ``point-ball`` keeps boundary points within ``radius`` of ``point``.
    """

    name: str
    kind: str = "full"
    normal: tuple = None
    offset: float = 0.0
    point: tuple = None
    radius: float = 0.0
    tol: float = 1e-9

    def __post_init__(self):
        if self.kind not in SECTION_KINDS:
            raise DomainError(f"section {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "halfspace-cap" and self.normal is None:
            raise DomainError(f"section {self.name!r}: halfspace-cap needs a normal")
        if self.kind == "point-ball" and self.point is None:
            raise DomainError(f"section {self.name!r}: point-ball needs a point")
        if self.radius < 0 or self.tol < 0:
            raise DomainError(f"section {self.name!r}: radius and tol must be nonnegative")
        if self.normal is not None:
            object.__setattr__(self, "normal", tuple(float(v) for v in np.ravel(self.normal)))
        if self.point is not None:
            object.__setattr__(self, "point", tuple(float(v) for v in np.ravel(self.point)))

    @classmethod
    def full(cls, name="boundary"):
        return cls(name=name)

    @classmethod
    def cap(cls, name, normal, offset, tol=1e-9):
        return cls(name=name, kind="halfspace-cap", normal=normal, offset=offset, tol=tol)

    @classmethod
    def ball(cls, name, point, radius=0.0, tol=1e-9):
        return cls(name=name, kind="point-ball", point=point, radius=radius, tol=tol)

    def predicate(self, center, y):
        """Section predicate for boundary points ``y`` (no boundary check)."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if self.kind == "full":
            return np.ones(len(y), dtype=bool)
        if self.kind == "halfspace-cap":
            v = np.asarray(self.normal)
            return (y - center) @ v >= self.offset - self.tol
        dist = np.linalg.norm(y - np.asarray(self.point), axis=1)
        return dist <= self.radius + self.tol

    def distance(self, domain, y):
        """Euclidean distance from points ``y`` to the section (sampled for caps)."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if self.kind == "full":
            return np.abs(domain.signed_distance(y))
        if self.kind == "point-ball" and self.radius == 0.0:
            return np.linalg.norm(y - np.asarray(self.point), axis=1)
        pts = domain.section_samples(self, 4096)
        diff = y[:, None, :] - pts[None, :, :]
        return np.sqrt(np.min(np.einsum("ijk,ijk->ij", diff, diff), axis=1))


@dataclass(frozen=True, eq=False)
class DomainSpec:
    kind: str
    center: np.ndarray
    Q: np.ndarray = None
    H: np.ndarray = None
    h: np.ndarray = None
    lower: float = None
    upper: float = None
    sections: tuple = ()
    boundary_tol: float = 1e-9

    def __post_init__(self):
        if self.kind not in DOMAIN_KINDS:
            raise DomainError(f"unknown domain kind {self.kind!r}")
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        object.__setattr__(self, "sections", tuple(self.sections))
        if self.kind == "interval":
            if not (self.lower < self.upper):
                raise DomainError("interval needs lower < upper")
        elif self.kind == "ellipsoid":
            Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
            if Q.shape != (self.dim, self.dim) or not np.allclose(Q, Q.T, atol=1e-12):
                raise DomainError("ellipsoid Q must be a symmetric d x d matrix")
            if np.linalg.eigvalsh(Q).min() <= 0:
                raise DomainError("ellipsoid Q must be positive definite")
            object.__setattr__(self, "Q", Q)
        else:
            H = np.atleast_2d(np.asarray(self.H, dtype=float))
            hv = np.asarray(self.h, dtype=float).ravel()
            if H.shape[0] != hv.shape[0] or H.shape[1] != self.dim:
                raise DomainError("polytope H, h shapes are inconsistent")
            object.__setattr__(self, "H", H)
            object.__setattr__(self, "h", hv)
            if np.any(H @ self.center >= hv):
                raise DomainError("polytope center is not interior")
            self._check_bounded_polytope()
        names = [s.name for s in self.sections]
        if len(set(names)) != len(names):
            raise DomainError("section names must be unique")
        for s in self.sections:
            self.check_section(s)

    # constructors
    @classmethod
    def interval(cls, lower, upper, sections=(), **kw):
        return cls(kind="interval", center=[0.5 * (lower + upper)], lower=float(lower),
                   upper=float(upper), sections=sections, **kw)

    @classmethod
    def ellipsoid(cls, center, Q, sections=(), **kw):
        return cls(kind="ellipsoid", center=center, Q=Q, sections=sections, **kw)

    @classmethod
    def ball(cls, center, radius=1.0, sections=(), **kw):
        c = np.atleast_1d(np.asarray(center, dtype=float))
        return cls.ellipsoid(c, np.eye(len(c)) / radius**2, sections=sections, **kw)

    @classmethod
    def polytope(cls, H, h, center=None, sections=(), **kw):
        if center is None:
            center = chebyshev_center(H, h)
        return cls(kind="polytope", center=center, H=H, h=h, sections=sections, **kw)

    @property
    def dim(self):
        return self.center.shape[0]

    def section(self, name):
        for s in self.sections:
            if s.name == name:
                return s
        raise DomainError(f"no section named {name!r}")

    def with_sections(self, sections):
        kw = {k: getattr(self, k) for k in ("kind", "center", "Q", "H", "h", "lower", "upper",
                                             "boundary_tol")}
        return DomainSpec(sections=tuple(sections), **kw)

    def _check_bounded_polytope(self):
        d = self.dim
        for i in range(d):
            for sgn in (1.0, -1.0):
                c = np.zeros(d)
                c[i] = sgn
                res = linprog(c, A_ub=self.H, b_ub=self.h, bounds=[(None, None)] * d)
                if res.status == 3:
                    raise DomainError("polytope is unbounded")

    # geometry
    def contains(self, x):
        """Open-set membership; vectorized over leading axes."""
        return self.signed_distance(x) < 0

    def _g(self, x):
        z = x - self.center
        return np.einsum("...i,ij,...j->...", z, self.Q, z)

    def signed_distance(self, x):
        """Negative inside, zero on the boundary.

        Exact for intervals, balls and (inside) polytopes; for general
        ellipsoids it is the first-order distance ``(sqrt(g)-1) sqrt(g)/|Q(x-c)|``.
        """
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.dim:
            x = x[..., None] if self.dim == 1 else x
        if self.kind == "interval":
            xi = x[..., 0]
            return np.maximum(self.lower - xi, xi - self.upper)
        if self.kind == "ellipsoid":
            z = x - self.center
            g = np.sqrt(np.maximum(self._g(x), 0.0))
            qz = np.linalg.norm(z @ self.Q, axis=-1)
            with np.errstate(invalid="ignore", divide="ignore"):
                sd = (g - 1.0) * g / qz
            inner = -1.0 / np.sqrt(np.linalg.eigvalsh(self.Q).max())
            return np.where(qz > 0, sd, inner)
        norms = np.linalg.norm(self.H, axis=1)
        return np.max((x @ self.H.T - self.h) / norms, axis=-1)

    def outward_normal(self, y, corner_tol=1e-9):
        """Unit outward normal at boundary points; NaN rows where undefined (polytope corners)."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if self.kind == "interval":
            n = np.where(y[:, 0] >= self.center[0], 1.0, -1.0)[:, None]
            return n
        if self.kind == "ellipsoid":
            g = (y - self.center) @ self.Q
            return g / np.linalg.norm(g, axis=1, keepdims=True)
        norms = np.linalg.norm(self.H, axis=1)
        s = (y @ self.H.T - self.h) / norms
        best = np.argmax(s, axis=1)
        top = s[np.arange(len(y)), best]
        ties = np.sum(s >= top[:, None] - corner_tol, axis=1) > 1
        out = self.H[best] / norms[best, None]
        out[ties] = np.nan
        return out

    def segment_exit(self, xa, xb):
        """Fraction ``s`` in [0, 1] where segment ``xa -> xb`` first meets the boundary.

        Rows with ``xa`` inside and ``xb`` outside; vectorized over rows.
        """
        xa = np.atleast_2d(xa)
        xb = np.atleast_2d(xb)
        dx = xb - xa
        if self.kind == "interval":
            bound = np.where(xb[:, 0] >= self.upper, self.upper, self.lower)
            with np.errstate(divide="ignore", invalid="ignore"):
                s = (bound - xa[:, 0]) / dx[:, 0]
        elif self.kind == "ellipsoid":
            za = xa - self.center
            qa = np.einsum("ij,jk,ik->i", dx, self.Q, dx)
            qb = 2.0 * np.einsum("ij,jk,ik->i", za, self.Q, dx)
            qc = np.einsum("ij,jk,ik->i", za, self.Q, za) - 1.0
            with np.errstate(divide="ignore", invalid="ignore"):
                s = (-qb + np.sqrt(np.maximum(qb * qb - 4.0 * qa * qc, 0.0))) / (2.0 * qa)
        else:
            hd = dx @ self.H.T
            slack = self.h - xa @ self.H.T
            with np.errstate(divide="ignore", invalid="ignore"):
                s = np.where(hd > 0, slack / hd, np.inf).min(axis=1)
        return np.clip(np.nan_to_num(s, nan=1.0, posinf=1.0), 0.0, 1.0)

    def ray_boundary(self, directions):
        """Boundary points hit by rays from the center along ``directions``."""
        u = np.atleast_2d(np.asarray(directions, dtype=float))
        u = u / np.linalg.norm(u, axis=1, keepdims=True)
        if self.kind == "interval":
            return np.where(u[:, :1] > 0, self.upper, self.lower)
        if self.kind == "ellipsoid":
            t = 1.0 / np.sqrt(np.einsum("ij,jk,ik->i", u, self.Q, u))
            return self.center + t[:, None] * u
        hu = u @ self.H.T
        slack = self.h - self.H @ self.center
        with np.errstate(divide="ignore"):
            t = np.where(hu > 0, slack / hu, np.inf)
        return self.center + t.min(axis=1)[:, None] * u

    def boundary_samples(self, n, seed=0):
        """Deterministic quasi-uniform boundary points (by direction from the center)."""
        d = self.dim
        if d == 1:
            return np.array([[self.lower], [self.upper]])
        if d == 2:
            th = 2.0 * np.pi * np.arange(n) / n
            return self.boundary_point(th)
        sob = qmc.Sobol(d, scramble=True, seed=seed).random(n)
        from scipy.special import ndtri
        u = ndtri(np.clip(sob, 1e-12, 1 - 1e-12))
        return self.ray_boundary(u)

    def boundary_point(self, param):
        """Inverse of ``boundary_parameter`` for d <= 2."""
        p = np.atleast_1d(np.asarray(param, dtype=float))
        if self.dim == 1:
            return p[:, None]
        if self.dim != 2:
            raise GeometryError("boundary_point is defined for d <= 2 only")
        return self.ray_boundary(np.column_stack([np.cos(p), np.sin(p)]))

    def boundary_parameter(self, y):
        """Scalar parametrization of boundary points used for sorting and histograms.

        d = 1: the coordinate. d = 2: polar angle about the center in [0, 2 pi).
        d >= 3: angle to the first axis, in [0, pi].
        """
        y = np.atleast_2d(np.asarray(y, dtype=float))
        z = y - self.center
        if self.dim == 1:
            return y[:, 0]
        if self.dim == 2:
            return np.mod(np.arctan2(z[:, 1], z[:, 0]), 2.0 * np.pi)
        return np.arccos(np.clip(z[:, 0] / np.linalg.norm(z, axis=1), -1.0, 1.0))

    def parameter_range(self):
        if self.dim == 1:
            return self.lower, self.upper
        if self.dim == 2:
            return 0.0, 2.0 * np.pi
        return 0.0, np.pi

    @cached_property
    def _arc_table(self):
        th = np.linspace(0.0, 2.0 * np.pi, 8193)
        pts = self.boundary_point(th)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        return th, np.concatenate([[0.0], np.cumsum(seg)])

    def geodesic_distance(self, y1, y2):
        """Distance along the boundary curve (d = 2); Euclidean otherwise."""
        y1 = np.atleast_2d(np.asarray(y1, dtype=float))
        y2 = np.atleast_2d(np.asarray(y2, dtype=float))
        if self.dim != 2:
            return np.linalg.norm(y1 - y2, axis=-1)
        th, s = self._arc_table
        s1 = np.interp(self.boundary_parameter(y1), th, s)
        s2 = np.interp(self.boundary_parameter(y2), th, s)
        gap = np.abs(s1 - s2)
        return np.minimum(gap, s[-1] - gap)

    def bounding_box(self):
        if self.kind == "interval":
            return np.array([self.lower]), np.array([self.upper])
        if self.kind == "ellipsoid":
            half = np.sqrt(np.diag(np.linalg.inv(self.Q)))
            return self.center - half, self.center + half
        d = self.dim
        lo, hi = np.empty(d), np.empty(d)
        for i in range(d):
            c = np.zeros(d)
            c[i] = 1.0
            lo[i] = linprog(c, A_ub=self.H, b_ub=self.h, bounds=[(None, None)] * d).fun
            hi[i] = -linprog(-c, A_ub=self.H, b_ub=self.h, bounds=[(None, None)] * d).fun
        return lo, hi

    # sections
    def on_boundary(self, y):
        return np.abs(self.signed_distance(np.atleast_2d(y))) <= self.boundary_tol

    def in_section(self, section, y):
        """Section predicate for boundary points; no boundary-proximity check."""
        return section.predicate(self.center, y)

    def section_samples(self, section, n):
        """Boundary samples that belong to ``section`` (at least one if it is nonempty)."""
        pts = self.boundary_samples(n)
        extra = []
        if section.kind == "point-ball":
            p = np.asarray(section.point)
            if self.dim == 1:
                extra.append(p)
            else:
                extra.append(self.ray_boundary(p - self.center)[0])
        elif section.kind == "halfspace-cap" and self.dim > 1:
            extra.append(self.ray_boundary(np.asarray(section.normal))[0])
        if extra:
            pts = np.vstack([pts, np.atleast_2d(extra)])
        pts = pts[self.on_boundary(pts) & self.in_section(section, pts)]
        if len(pts):
            keep = np.unique(np.round(pts, 12), axis=0, return_index=True)[1]
            pts = pts[np.sort(keep)]
        return pts

    def check_section(self, section):
        if len(self.section_samples(section, 512)) == 0:
            raise DomainError(f"section {section.name!r} has no sampled boundary member")


def chebyshev_center(H, h):
    H = np.atleast_2d(np.asarray(H, dtype=float))
    h = np.asarray(h, dtype=float).ravel()
    d = H.shape[1]
    norms = np.linalg.norm(H, axis=1)
    c = np.zeros(d + 1)
    c[-1] = -1.0
    res = linprog(c, A_ub=np.column_stack([H, norms]), b_ub=h,
                  bounds=[(None, None)] * d + [(0, None)])
    if res.status != 0 or res.x[-1] <= 0:
        raise DomainError("polytope has empty interior or is unbounded")
    return res.x[:d]


def section_membership(domain, section, y):
    """Whether boundary point ``y`` lies in ``section``.

    Raises DomainError if ``y`` is farther than ``domain.boundary_tol`` from the boundary.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    sd = float(domain.signed_distance(y[None, :])[0])
    if abs(sd) > domain.boundary_tol:
        raise DomainError(f"point {y.tolist()} is not on the boundary (signed distance {sd:.3g})")
    return bool(domain.in_section(section, y)[0])
