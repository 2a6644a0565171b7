"""Freidlin-Wentzell action: Lagrangian, Hamiltonian, discrete action and its minimizers.

Paths live on a time grid ``t_0 = 0 < ... < t_N = T``. On each interval the
velocity is the difference quotient ``v_k = (phi_{k+1} - phi_k) / h_k`` and
the action is the trapezoid sum

    S = sum_k h_k / 2 * (L(phi_k, v_k) + L(phi_{k+1}, v_k)).

Writing ``L = |sigma^{-1}(v - b)|^2 / 2`` turns S into half a sum of squared
residuals, so the fixed-horizon problem is a nonlinear least-squares problem
whose Gauss-Newton matrix is block tridiagonal. For constant sigma the
problem is quadratic and one Gauss-Newton step is exact.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import LinAlgError, solveh_banded

from .errors import (EllipticityError, NonConvergenceError, PathError, PreconditionError)
from .system import closed_loop_drift, diffusion_matrix

_GOLD = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True, eq=False)
class DiscretePath:
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).ravel()
        x = np.asarray(self.states, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if len(t) < 2 or x.shape[0] != len(t):
            raise PathError("need at least two grid points and one state per time")
        if not np.all(np.diff(t) > 0):
            raise PathError("time grid must be strictly increasing")
        if t[0] != 0.0:
            raise PathError("time grid must start at 0")
        if not np.all(np.isfinite(x)):
            raise PathError("path states must be finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)

    @classmethod
    def uniform(cls, T, states):
        states = np.asarray(states, dtype=float)
        return cls(np.linspace(0.0, T, len(states)), states)

    @property
    def N(self):
        return len(self.times) - 1

    @property
    def T(self):
        return float(self.times[-1])

    @property
    def dim(self):
        return self.states.shape[1]


@dataclass(frozen=True)
class ActionSettings:
    """Solver knobs shared by the fixed-horizon and free-horizon minimizers."""

    N: int = 400
    T_grid: tuple = (1.0, 2.0, 4.0, 8.0, 16.0)
    restarts: int = 3
    grad_tol: float = 1e-6
    max_iter: int = 100
    free_time_tol: float = 0.02
    boundary_samples: int = 64
    tie_tol: float = None
    interior_tol: float = 1e-6
    penalty: float = 1e3
    penalty_sweeps: int = 3
    refine_iters: int = 20

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be >= 2")
        if not self.T_grid or any(T <= 0 for T in self.T_grid):
            raise ValueError("T_grid must hold positive horizons")
        object.__setattr__(self, "T_grid", tuple(sorted(float(T) for T in self.T_grid)))
        if not 1 <= self.restarts <= 3:
            raise ValueError("restarts must be 1, 2 or 3")


@dataclass(frozen=True, eq=False)
class ActionResult:
    value: float
    path: DiscretePath
    T: float
    converged: bool
    restarts_used: int
    grad_norm: float = 0.0
    y: np.ndarray = None
    values_by_T: dict = field(default_factory=dict)
    warnings: tuple = ()


@dataclass(frozen=True, eq=False)
class QuasipotentialProfile:
    points: np.ndarray
    params: np.ndarray
    values: np.ndarray
    flagged: np.ndarray
    x_star: np.ndarray
    mode: int

    @property
    def valid(self):
        return ~self.flagged

    @property
    def v_min(self):
        return float(np.min(self.values[self.valid]))

    @property
    def argmin(self):
        v = np.where(self.valid, self.values, np.inf)
        return int(np.argmin(v))


# pointwise quantities

def lagrangian(sys, mode, x, v):
    """``(v - b(x))^T a(x)^{-1} (v - b(x)) / 2``; vectorized over leading axes."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    a = diffusion_matrix(sys, x)
    r = v - closed_loop_drift(sys, mode, x)
    w = np.linalg.solve(a, r[..., None])[..., 0]
    return 0.5 * np.einsum("...i,...i->...", r, w)


def hamiltonian(sys, mode, x, p):
    """``inf_v L(x, v) + <p, v> = <p, b(x)> - p^T a(x) p / 2``."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    a = diffusion_matrix(sys, x)
    b = closed_loop_drift(sys, mode, x)
    return np.einsum("...i,...i->...", p, b) - 0.5 * np.einsum("...i,...ij,...j->...", p, a, p)


def optimal_velocity(sys, mode, x, p):
    """Minimizer ``b(x) - a(x) p`` of ``L(x, v) + <p, v>``."""
    a = diffusion_matrix(sys, x)
    return closed_loop_drift(sys, mode, x) - np.einsum("...ij,...j->...i", a, p)


# discrete action

def _sigma_inv(sys, X):
    diff = sys.diffusion
    if diff.linear is not None:
        lam = diff.min_eigenvalue(X)
        if np.any(lam < diff.ellipticity_floor):
            raise EllipticityError(f"a(x) smallest eigenvalue {lam.min():.3g} below floor "
                                   f"{diff.ellipticity_floor:g} along the path")
    try:
        return np.linalg.inv(diff.sigma(X))
    except np.linalg.LinAlgError as exc:
        raise EllipticityError("sigma(x) is singular along the path") from exc


def _residuals(sys, mode, X, h, jac=True):
    """Residuals R (N, 2d) with ``S = |R|^2 / 2`` and their blocks wrt phi_k, phi_{k+1}."""
    M = sys.drift_matrix(mode)
    V = np.diff(X, axis=0) / h[:, None]
    c = np.sqrt(h / 2.0)
    lin = sys.diffusion.linear
    R, Ja, Jb = [], [], []
    for side, P in ((0, X[:-1]), (1, X[1:])):
        U = V - P @ M.T
        Si = _sigma_inv(sys, P)
        W = np.einsum("nij,nj->ni", Si, U)
        R.append(c[:, None] * W)
        if not jac:
            continue
        dv = Si / h[:, None, None]
        dP = -np.einsum("nij,jk->nik", Si, M)
        if lin is not None:
            T = np.einsum("mij,nj->nmi", lin, W)
            dP = dP - np.einsum("nik,nmk->nim", Si, T)
        if side == 0:
            Ja.append(c[:, None, None] * (dP - dv))
            Jb.append(c[:, None, None] * dv)
        else:
            Ja.append(-c[:, None, None] * dv)
            Jb.append(c[:, None, None] * (dP + dv))
    R = np.concatenate(R, axis=1)
    if not jac:
        return R
    return R, np.concatenate(Ja, axis=1), np.concatenate(Jb, axis=1)


def path_action(sys, mode, path):
    """Trapezoid action of a path (interval difference-quotient velocities)."""
    if not isinstance(path, DiscretePath):
        raise PathError("path must be a DiscretePath")
    X = path.states
    R = _residuals(sys, mode, X, np.diff(path.times), jac=False)
    return float(0.5 * np.sum(R * R))


def path_action_gradient(sys, mode, path):
    """Gradient of :func:`path_action` with respect to every state, shape (N+1, d)."""
    X = path.states
    R, Ja, Jb = _residuals(sys, mode, X, np.diff(path.times))
    G = np.zeros_like(X)
    G[:-1] += np.einsum("nri,nr->ni", Ja, R)
    G[1:] += np.einsum("nri,nr->ni", Jb, R)
    return G


# fixed-horizon minimization

def _penalty_terms(domain, X, mu, tol):
    """Exterior penalty residuals ``sqrt(2 mu) max(0, sd - tol)`` and their gradients."""
    sd = domain.signed_distance(X)
    viol = np.maximum(sd - tol, 0.0)
    grad = np.zeros_like(X)
    idx = np.flatnonzero(viol > 0)
    if idx.size:
        step = 1e-7
        for i in range(X.shape[1]):
            e = np.zeros(X.shape[1])
            e[i] = step
            grad[idx, i] = (domain.signed_distance(X[idx] + e)
                            - domain.signed_distance(X[idx] - e)) / (2 * step)
    s = math.sqrt(2.0 * mu)
    return s * viol, s * grad


def _objective(sys, mode, X, h, domain, mu, tol):
    R = _residuals(sys, mode, X, h, jac=False)
    val = 0.5 * float(np.sum(R * R))
    if domain is not None and mu > 0:
        p, _ = _penalty_terms(domain, X[1:-1], mu, tol)
        val += 0.5 * float(np.sum(p * p))
    return val


def _normal_system(sys, mode, X, h, domain, mu, tol):
    """Gradient (interior states) and banded Gauss-Newton matrix in upper storage."""
    R, Ja, Jb = _residuals(sys, mode, X, h)
    N, d = len(h), X.shape[1]
    G = np.zeros_like(X)
    G[:-1] += np.einsum("nri,nr->ni", Ja, R)
    G[1:] += np.einsum("nri,nr->ni", Jb, R)
    D = np.zeros((N + 1, d, d))
    D[:-1] += np.einsum("nri,nrj->nij", Ja, Ja)
    D[1:] += np.einsum("nri,nrj->nij", Jb, Jb)
    O = np.einsum("nri,nrj->nij", Ja, Jb)
    if domain is not None and mu > 0:
        p, gp = _penalty_terms(domain, X[1:-1], mu, tol)
        G[1:-1] += p[:, None] * gp
        D[1:-1] += np.einsum("ni,nj->nij", gp, gp)
    return G[1:-1], D[1:-1], O[1:-1]


def _banded(D, O, lam):
    """Upper banded storage of the block-tridiagonal matrix (D + lam*scale, O)."""
    m, d, _ = D.shape
    n = m * d
    u = 2 * d - 1
    ab = np.zeros((u + 1, n))
    diag = np.einsum("kii->ki", D).ravel()
    damp = lam * np.maximum(diag, 1e-12)
    for a in range(d):
        for b in range(a, d):
            # diagonal block entry (a, b): rows k*d+a, cols k*d+b
            cols = np.arange(m) * d + b
            ab[u - (b - a), cols] = D[:, a, b]
        for b in range(d):
            if m > 1:
                cols = np.arange(1, m) * d + b
                ab[u - (d + b - a), cols] = O[:, a, b]
    ab[u] += damp
    return ab


def _levenberg_marquardt(sys, mode, X0, h, domain, mu, settings):
    X = X0.copy()
    d = X.shape[1]
    lam = 1e-10
    val = _objective(sys, mode, X, h, domain, mu, settings.interior_tol)
    hbar = float(np.mean(h))
    gnorm = math.inf
    for _ in range(settings.max_iter):
        g, D, O = _normal_system(sys, mode, X, h, domain, mu, settings.interior_tol)
        gnorm = float(np.max(np.abs(g))) / hbar if g.size else 0.0
        if gnorm <= settings.grad_tol:
            return X, val, gnorm, True
        accepted, rel = False, 0.0
        for _ in range(30):
            try:
                step = solveh_banded(_banded(D, O, lam), -g.ravel(), lower=False)
            except (LinAlgError, ValueError):
                lam = max(lam * 10.0, 1e-8)
                continue
            Xn = X.copy()
            Xn[1:-1] += step.reshape(-1, d)
            if not np.all(np.isfinite(Xn)):
                lam = max(lam * 10.0, 1e-8)
                continue
            try:
                vn = _objective(sys, mode, Xn, h, domain, mu, settings.interior_tol)
            except EllipticityError:
                lam = max(lam * 10.0, 1e-8)
                continue
            if vn <= val:
                X, accepted = Xn, True
                rel = (val - vn) / max(val, 1e-300)
                val = vn
                lam = max(lam / 10.0, 1e-12)
                break
            lam = max(lam * 10.0, 1e-8)
        if not accepted or rel < 1e-15:
            g, _, _ = _normal_system(sys, mode, X, h, domain, mu, settings.interior_tol)
            gnorm = float(np.max(np.abs(g))) / hbar if g.size else 0.0
            return X, val, gnorm, gnorm <= settings.grad_tol
    return X, val, gnorm, gnorm <= settings.grad_tol


def _flow(sys, mode, x0, times):
    from scipy.linalg import expm
    M = sys.drift_matrix(mode)
    return np.array([expm(M * t) @ x0 for t in times])


def _initial_paths(sys, mode, x0, y, times, warm):
    s = (times / times[-1])[:, None]
    inits = [x0 + s * (y - x0)]
    half = len(times) // 2
    flow = _flow(sys, mode, x0, times[:half + 1])
    tail = times[half:]
    r = ((tail - tail[0]) / (tail[-1] - tail[0]))[:, None]
    inits.append(np.vstack([flow[:-1], flow[-1] + r * (y - flow[-1])]))
    if warm is not None:
        shift = times[-1] - warm.T
        tt = times - shift
        X = np.empty((len(times), len(x0)))
        for i in range(len(x0)):
            X[:, i] = np.interp(tt, warm.times, warm.states[:, i], left=warm.states[0, i])
        X[0], X[-1] = x0, y
        inits.append(X)
    return inits


def minimize_action_fixed(sys, mode, x0, y, T, N=400, domain=None, settings=None, warm=None):
    """Minimize the discrete action over paths from ``x0`` to ``y`` on [0, T].

    Interior states are free; when ``domain`` is given they are kept in the
    closed domain by an exterior quadratic penalty (weight x10 per sweep).
    Restarts, in order: straight line, flow-then-jump, warm start (end-aligned
    resampling of ``warm``, typically the optimum for a shorter horizon).
    """
    settings = settings or ActionSettings(N=N)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if not T > 0:
        raise ValueError("T must be positive")
    if domain is not None:
        sd = domain.signed_distance(np.vstack([x0, y]))
        if np.any(sd > domain.boundary_tol):
            raise PreconditionError("x0 and y must lie in the closed domain")
    times = np.linspace(0.0, T, N + 1)
    h = np.diff(times)
    inits = _initial_paths(sys, mode, x0, y, times, warm)[:settings.restarts]
    best = None
    used = 0
    for X0 in inits:
        used += 1
        try:
            mu = settings.penalty if domain is not None else 0.0
            for _ in range(settings.penalty_sweeps):
                X, val, gnorm, ok = _levenberg_marquardt(sys, mode, X0, h, domain, mu, settings)
                if domain is None or np.all(domain.signed_distance(X) <= settings.interior_tol):
                    break
                X0, mu = X, mu * 10.0
        except (EllipticityError, FloatingPointError):
            continue
        if not np.isfinite(val):
            continue
        path = DiscretePath(times, X)
        action = path_action(sys, mode, path)
        cand = (not ok, action, path, gnorm, ok)
        if best is None or cand[:2] < best[:2]:
            best = cand
    if best is None:
        raise NonConvergenceError("all restarts diverged", best_value=math.inf)
    _, action, path, gnorm, ok = best
    return ActionResult(value=action, path=path, T=float(T), converged=ok, restarts_used=used,
                        grad_norm=gnorm, y=y, values_by_T={float(T): action})


def minimize_action_free(sys, mode, x0, y, domain=None, settings=None):
    """Minimize over the horizon as well as the path.

    Each grid horizon is warm-started from the previous optimum. When the best
    grid horizon is not the largest one, it is refined by golden-section
    search in log T between its grid neighbours. When the largest horizon is
    best, the infimum is certified only if the two largest horizons agree to
    ``free_time_tol`` (relative); otherwise a warning is attached.
    """
    settings = settings or ActionSettings()
    grid = settings.T_grid
    results = []
    warm = None
    for T in grid:
        r = minimize_action_fixed(sys, mode, x0, y, T, settings.N, domain, settings, warm)
        results.append(r)
        warm = r.path
    by_T = {T: r.value for T, r in zip(grid, results)}
    k = int(np.argmin([r.value for r in results]))
    best = results[k]
    warns = ()
    if k < len(grid) - 1 and settings.refine_iters > 0:
        lo = math.log(grid[k - 1]) if k > 0 else math.log(grid[0] / 4.0)
        hi = math.log(grid[k + 1])
        cache = {}

        def f(logT):
            r = minimize_action_fixed(sys, mode, x0, y, math.exp(logT), settings.N, domain,
                                      settings, best.path)
            cache[logT] = r
            return r.value

        logT, v = _golden(f, lo, hi, max(settings.refine_iters // 2, 1))
        if v < best.value:
            best = cache[logT]
            by_T[best.T] = best.value
    elif len(grid) >= 2:
        v1, v2 = by_T[grid[-2]], by_T[grid[-1]]
        scale = max(abs(v2), 1e-12)
        if abs(v1 - v2) / scale >= settings.free_time_tol:
            warns = (f"free-time infimum not stabilized: relative change "
                     f"{abs(v1 - v2) / scale:.3g} between T={grid[-2]:g} and "
                     f"T={grid[-1]:g}",)
    return replace(best, values_by_T=dict(sorted(by_T.items())), warnings=warns)


def _golden(f, a, b, iters):
    c = b - _GOLD * (b - a)
    d = a + _GOLD * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLD * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLD * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def rate_to_section(sys, mode, x0, domain, section, settings=None):
    """Minimal action from ``x0`` to ``section`` over boundary samples and horizons.

    Coarse pass over ``settings.boundary_samples`` section points; in 2D the best
    sample is refined by golden-section search in the polar angle. The result
    carries a warning when the two largest horizons disagree by more than
    ``free_time_tol`` (relative).
    """
    settings = settings or ActionSettings()
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    cands = domain.section_samples(section, settings.boundary_samples)
    if len(cands) == 0:
        raise PreconditionError(f"section {section.name!r} has no boundary samples")
    results = [minimize_action_free(sys, mode, x0, y, domain, settings) for y in cands]
    vals = np.array([r.value for r in results])
    k = int(np.argmin(vals))
    best = results[k]
    if domain.dim == 2 and len(cands) > 1 and settings.refine_iters > 0:
        th0 = float(domain.boundary_parameter(cands[k])[0])
        dth = 2.0 * np.pi / settings.boundary_samples
        cache = {}

        def f(th):
            y = domain.boundary_point(th)[0]
            if not domain.in_section(section, y)[0]:
                return math.inf
            r = minimize_action_free(sys, mode, x0, y, domain, settings)
            cache[th] = r
            return r.value

        th, v = _golden(f, th0 - dth, th0 + dth, settings.refine_iters)
        if v < best.value:
            best = cache[th]
    return best


def quasipotential_profile(sys, mode, domain, x_star=None, settings=None):
    """Boundary profile ``y -> V(x*, y)`` over ``settings.boundary_samples`` points."""
    settings = settings or ActionSettings()
    x_star = np.zeros(domain.dim) if x_star is None else np.atleast_1d(
        np.asarray(x_star, dtype=float))
    if not bool(domain.contains(x_star[None, :])[0]):
        raise PreconditionError("x* must be an interior point of the domain")
    pts = domain.boundary_samples(settings.boundary_samples)
    vals = np.empty(len(pts))
    flagged = np.zeros(len(pts), dtype=bool)
    for i, y in enumerate(pts):
        try:
            r = minimize_action_free(sys, mode, x_star, y, domain, settings)
            vals[i], flagged[i] = r.value, not r.converged
        except NonConvergenceError as exc:
            vals[i], flagged[i] = exc.best_value, True
    if flagged.sum() > 0.05 * len(pts):
        raise NonConvergenceError(f"{int(flagged.sum())} of {len(pts)} profile samples did not "
                                  f"converge", best_value=float(np.min(vals)))
    return QuasipotentialProfile(pts, domain.boundary_parameter(pts), vals, flagged, x_star, mode)


def exit_set(profile, tie_tol=None):
    """Profile samples within ``tie_tol`` of the minimum, sorted by boundary parameter.

    ``tie_tol`` defaults to ``1e-3 * V_min``.
    """
    vmin = profile.v_min
    if tie_tol is None:
        tie_tol = 1e-3 * vmin
    keep = profile.valid & (profile.values <= vmin + tie_tol)
    idx = np.flatnonzero(keep)
    idx = idx[np.argsort(profile.params[idx], kind="stable")]
    return profile.points[idx]


def penalty_terminal_cost(section, M, domain=None):
    """``Phi_M(y) = M * dist(y, section)^2``, zero on the section."""
    if not M > 0:
        raise ValueError("M must be positive")
    if section.kind == "halfspace-cap" and domain is None:
        raise ValueError("a halfspace-cap section needs its domain to measure distance")

    def phi(y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if section.kind == "full":
            return np.zeros(len(y))
        inside = section.predicate(domain.center if domain is not None else 0.0, y) \
            if section.kind == "halfspace-cap" else None
        dist = section.distance(domain, y)
        if inside is not None:
            dist = np.where(inside, 0.0, dist)
        return M * dist * dist

    return phi
