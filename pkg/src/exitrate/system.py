"""Multi-channel linear systems, their failure modes, and the diffusion term.

Mode 0 is the nominal closed loop ``A + sum_i B_i K_i``; mode ``j`` (1..n)
drops channel ``j``'s feedback. Modes share the diffusion ``sigma(x)``.
"""
from dataclasses import dataclass

import numpy as np

from .domain import DomainSpec, section_membership  # noqa: F401  (re-export)
from .errors import DomainError, EllipticityError, GeometryError, NumericalError, RangeError


@dataclass(frozen=True, eq=False)
class DiffusionSpec:
    """``sigma(x) = sigma0 + sum_m x_m * linear[m]``.

    ``linear`` is None for the constant kind, else an array of shape (d, d, d).
    """

    sigma0: np.ndarray
    linear: np.ndarray = None
    lipschitz_bound: float = np.inf
    ellipticity_floor: float = 1e-6

    def __post_init__(self):
        s0 = np.atleast_2d(np.asarray(self.sigma0, dtype=float))
        d = s0.shape[0]
        if s0.shape != (d, d):
            raise ValueError("sigma0 must be square")
        object.__setattr__(self, "sigma0", s0)
        if self.linear is not None:
            lin = np.asarray(self.linear, dtype=float).reshape(d, d, d)
            if not np.any(lin):
                lin = None
            object.__setattr__(self, "linear", lin)
        if self.lipschitz_constant > self.lipschitz_bound * (1 + 1e-12):
            raise ValueError(f"state-affine sigma has Lipschitz constant "
                             f"{self.lipschitz_constant:.6g} > declared bound {self.lipschitz_bound}")

    @classmethod
    def constant(cls, sigma0, **kw):
        return cls(np.atleast_2d(sigma0), **kw)

    @property
    def kind(self):
        return "constant" if self.linear is None else "state-affine"

    @property
    def dim(self):
        return self.sigma0.shape[0]

    @property
    def lipschitz_constant(self):
        # ||sigma(x) - sigma(y)||_2 <= sum_m |x_m - y_m| ||S_m||_2 <= sqrt(sum ||S_m||^2) |x - y|
        if self.linear is None:
            return 0.0
        return float(np.sqrt(sum(np.linalg.norm(S, 2) ** 2 for S in self.linear)))

    def sigma(self, x):
        x = np.asarray(x, dtype=float)
        if self.linear is None:
            return np.broadcast_to(self.sigma0, x.shape[:-1] + self.sigma0.shape)
        return self.sigma0 + np.einsum("...m,mij->...ij", x, self.linear)

    def a(self, x):
        s = self.sigma(x)
        return s @ np.swapaxes(s, -1, -2)

    def min_eigenvalue(self, x):
        return np.linalg.eigvalsh(self.a(x))[..., 0]

    def check_ellipticity(self, points):
        pts = np.atleast_2d(points)
        lam = self.min_eigenvalue(pts)
        bad = np.flatnonzero(lam < self.ellipticity_floor)
        if bad.size:
            i = bad[0]
            raise EllipticityError(
                f"a(x) = sigma sigma^T has smallest eigenvalue {lam[i]:.3g} < floor "
                f"{self.ellipticity_floor:g} at x = {pts[i].tolist()}")
        return float(lam.min())


@dataclass(frozen=True, eq=False)
class Channel:
    B: np.ndarray
    K: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "B", np.atleast_2d(np.asarray(self.B, dtype=float)))
        object.__setattr__(self, "K", np.atleast_2d(np.asarray(self.K, dtype=float)))

    @property
    def product(self):
        return self.B @ self.K


@dataclass(frozen=True, eq=False)
class MultiChannelSystem:
    A: np.ndarray
    channels: tuple
    diffusion: DiffusionSpec

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        d = A.shape[0]
        if A.shape != (d, d):
            raise ValueError("A must be square")
        object.__setattr__(self, "A", A)
        chans = tuple(c if isinstance(c, Channel) else Channel(*c) for c in self.channels)
        if not chans:
            raise ValueError("at least one channel is required")
        for i, c in enumerate(chans, start=1):
            if c.B.shape[0] != d or c.K.shape[1] != d or c.B.shape[1] != c.K.shape[0] \
                    or c.B.shape[1] < 1:
                raise ValueError(f"channel {i}: B is {c.B.shape}, K is {c.K.shape}; "
                                 f"need B d x r and K r x d with d = {d}")
        object.__setattr__(self, "channels", chans)
        if self.diffusion.dim != d:
            raise ValueError("diffusion dimension does not match A")

    @classmethod
    def build(cls, A, Bs, Ks, sigma):
        diff = sigma if isinstance(sigma, DiffusionSpec) else DiffusionSpec.constant(sigma)
        return cls(A, tuple(Channel(B, K) for B, K in zip(Bs, Ks)), diff)

    @property
    def d(self):
        return self.A.shape[0]

    @property
    def n(self):
        return len(self.channels)

    @property
    def modes(self):
        return range(self.n + 1)

    def drift_matrix(self, mode):
        if not (0 <= mode <= self.n):
            raise RangeError(f"mode {mode} outside 0..{self.n}")
        M = self.A.copy()
        for i, c in enumerate(self.channels, start=1):
            if i != mode:
                M = M + c.product
        return M

    def with_gains(self, gains):
        if len(gains) != self.n:
            raise ValueError(f"expected {self.n} gains, got {len(gains)}")
        chans = tuple(Channel(c.B, K) for c, K in zip(self.channels, gains))
        return MultiChannelSystem(self.A, chans, self.diffusion)

    def with_diffusion(self, diffusion):
        return MultiChannelSystem(self.A, self.channels, diffusion)

    def relabel(self, perm):
        return MultiChannelSystem(self.A, tuple(self.channels[p] for p in perm), self.diffusion)


def closed_loop_drift(sys, mode, x):
    """``drift_matrix(mode) @ x``; accepts a single state or a stack of states."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("state must be finite")
    return x @ sys.drift_matrix(mode).T


@dataclass(frozen=True)
class VerificationReport:
    passed: bool
    abscissas: tuple
    mode_passed: tuple
    margin: float

    def as_dict(self):
        return {"passed": self.passed, "abscissas": list(self.abscissas),
                "mode_passed": list(self.mode_passed), "margin": self.margin}


def spectral_abscissa(M, label="matrix"):
    try:
        ev = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue iteration failed for {label}: {exc}") from exc
    if not np.all(np.isfinite(ev)):
        raise NumericalError(f"non-finite eigenvalues for {label}")
    return float(np.max(ev.real))


def verify_gain_tuple(sys, margin=0.0, tol=1e-9):
    """Check that every mode's drift matrix is Hurwitz with the given margin.

    A mode passes when its spectral abscissa is below ``-margin - tol``.
    """
    absc = tuple(spectral_abscissa(sys.drift_matrix(j), f"drift_matrix({j})") for j in sys.modes)
    ok = tuple(a < -margin - tol for a in absc)
    return VerificationReport(all(ok), absc, ok, margin)


@dataclass(frozen=True)
class AttractionReport:
    passed: bool
    worst_value: float
    worst_point: tuple
    worst_mode: int
    n_probes: int
    skipped: int


def verify_domain_attraction(sys, mode, domain, n_probes=256, seed=0):
    """Check that the mode drift points strictly inward at every boundary probe.

    ``mode=None`` checks all modes and reports the worst over them.
    """
    modes = list(sys.modes) if mode is None else [mode]
    probes = domain.boundary_samples(n_probes, seed=seed)
    normals = domain.outward_normal(probes)
    good = np.all(np.isfinite(normals), axis=1)
    skipped = int(np.sum(~good))
    if skipped > 0.1 * len(probes):
        raise GeometryError(f"{skipped} of {len(probes)} probes have no defined normal")
    worst, where, wmode = -np.inf, None, None
    for j in modes:
        vals = np.einsum("ij,ij->i", closed_loop_drift(sys, j, probes[good]), normals[good])
        k = int(np.argmax(vals))
        if vals[k] > worst:
            worst, where, wmode = float(vals[k]), tuple(probes[good][k].tolist()), j
    return AttractionReport(worst < 0, worst, where, wmode, len(probes), skipped)


def diffusion_matrix(sys, x):
    """``a(x) = sigma(x) sigma(x)^T``; raises EllipticityError below the floor."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("state must be finite")
    a = sys.diffusion.a(x)
    lam = np.linalg.eigvalsh(a)[..., 0]
    if np.any(lam < sys.diffusion.ellipticity_floor):
        raise EllipticityError(f"a(x) smallest eigenvalue {np.min(lam):.3g} below floor "
                               f"{sys.diffusion.ellipticity_floor:g}")
    return a


def check_origin_interior(domain):
    if not bool(domain.contains(np.zeros((1, domain.dim)))[0]):
        raise DomainError("the origin (common equilibrium) must lie inside the domain")


def probe_points(domain, n=1000, seed=0):
    """Deterministic points of the closed domain: boundary samples plus scaled copies."""
    b = domain.boundary_samples(max(n // 4, 2), seed=seed)
    rng = np.random.default_rng(seed)
    s = rng.uniform(0.0, 1.0, size=(n - len(b), 1))
    idx = rng.integers(0, len(b), size=n - len(b))
    inner = domain.center + s * (b[idx] - domain.center)
    return np.vstack([b, inner])
