"""Euler-Maruyama simulation of the perturbed closed loops and Monte Carlo exit estimators.

Each trial ``i`` draws its noise from the counter-based stream keyed by
``(seed, i)`` (see :mod:`exitrate.rng`), so any estimator is a deterministic
function of ``(system, mode, x0, domain, params)`` no matter how many worker
threads run the trials. Exits are located by intersecting the last step's
segment with the boundary.
"""
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from . import rng
from .errors import EmptySampleError, HorizonError, PreconditionError, SimulationError
from .system import spectral_abscissa

STATUS_EXITED = 0
STATUS_CENSORED = 1
STATUS_NONFINITE = 2

CHUNK = 1024
INFINITE_RATE = math.inf

_KIND_CODE = {"interval": 0, "ellipsoid": 1, "polytope": 2}


def worker_count():
    """Worker threads for trial batches; ``EXITRATE_THREADS`` caps it (default 1)."""
    try:
        return max(1, int(os.environ.get("EXITRATE_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class SimParams:
    eps: float
    dt: float = 1e-3
    t_max: float = None
    trials: int = 100_000
    seed: int = 0
    censor_limit: float = 0.01

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_max is not None and not self.dt < self.t_max:
            raise ValueError("dt must be smaller than t_max")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def horizon(self, sys, mode):
        """``t_max`` or, if unset, 50 / |spectral abscissa| of the mode drift."""
        if self.t_max is not None:
            return float(self.t_max)
        a = abs(spectral_abscissa(sys.drift_matrix(mode), f"drift_matrix({mode})"))
        if a == 0:
            raise ValueError("cannot default t_max for a drift with zero spectral abscissa")
        return 50.0 / a


@dataclass(frozen=True)
class ExitEvent:
    exited: bool
    tau: float
    y: np.ndarray
    censored: bool


@dataclass(frozen=True, eq=False)
class ExitSample:
    """Raw per-trial results, in trial-index order."""

    status: np.ndarray
    tau: np.ndarray
    y: np.ndarray
    mode: int
    params: SimParams

    @property
    def trials(self):
        return len(self.status)

    @property
    def exited(self):
        return self.status == STATUS_EXITED

    @property
    def censored(self):
        return self.status == STATUS_CENSORED

    @property
    def censored_fraction(self):
        return float(np.count_nonzero(self.censored)) / self.trials

    @property
    def exit_points(self):
        return self.y[self.exited]


@dataclass(frozen=True, eq=False)
class ExitStats:
    section: str
    trials: int
    hits: int
    exits: int
    censored: int
    q_hat: float
    ci95: float
    censored_fraction: float
    exit_points: np.ndarray = field(repr=False)
    in_section: np.ndarray = field(repr=False)


def _domain_arrays(domain):
    d = domain.dim
    Q = domain.Q if domain.Q is not None else np.zeros((d, d))
    H = domain.H if domain.H is not None else np.zeros((1, d))
    hh = domain.h if domain.h is not None else np.zeros(1)
    lo = domain.lower if domain.lower is not None else 0.0
    hi = domain.upper if domain.upper is not None else 0.0
    return (_KIND_CODE[domain.kind], np.ascontiguousarray(domain.center), np.ascontiguousarray(Q),
            np.ascontiguousarray(H), np.ascontiguousarray(hh), float(lo), float(hi))


@nb.njit
def _outside_ellipsoid(x, c, Q):
    d = x.shape[0]
    g = 0.0
    for i in range(d):
        zi = x[i] - c[i]
        for j in range(d):
            g += zi * Q[i, j] * (x[j] - c[j])
    return g >= 1.0


@nb.njit
def _outside_polytope(x, H, hh):
    d = x.shape[0]
    for f in range(H.shape[0]):
        s = 0.0
        for j in range(d):
            s += H[f, j] * x[j]
        if s >= hh[f]:
            return True
    return False


@nb.njit(inline="always")
def _crossing(kind, xa, xb, c, Q, H, hh, lo, hi):
    d = xa.shape[0]
    if kind == 0:
        bound = hi if xb[0] >= hi else lo
        s = (bound - xa[0]) / (xb[0] - xa[0])
    elif kind == 1:
        qa = 0.0
        qb = 0.0
        qc = 0.0
        for i in range(d):
            for j in range(d):
                dxi = xb[i] - xa[i]
                dxj = xb[j] - xa[j]
                zi = xa[i] - c[i]
                zj = xa[j] - c[j]
                qa += dxi * Q[i, j] * dxj
                qb += 2.0 * zi * Q[i, j] * dxj
                qc += zi * Q[i, j] * zj
        qc -= 1.0
        disc = qb * qb - 4.0 * qa * qc
        if disc < 0.0:
            disc = 0.0
        s = (-qb + math.sqrt(disc)) / (2.0 * qa)
    else:
        s = 1.0
        for f in range(H.shape[0]):
            hd = 0.0
            ha = 0.0
            for j in range(d):
                hd += H[f, j] * (xb[j] - xa[j])
                ha += H[f, j] * xa[j]
            if hd > 0.0:
                sf = (hh[f] - ha) / hd
                if sf < s:
                    s = sf
    if not (s >= 0.0):
        s = 0.0
    if s > 1.0:
        s = 1.0
    return s


@nb.njit(nogil=True)
def _exit_kernel(trials, seed, drift, sig0, siglin, affine, kind, c, Q, H, hh, lo, hi,
                 x0, sqdt, dt, nmax, zx, zf, status, tau, yout, path, record):
    d = x0.shape[0]
    x = np.empty(d)
    xn = np.empty(d)
    xi = np.empty(d)
    sig = np.empty((d, d))
    buf = np.empty(rng.BLOCK)
    rej = np.empty(rng.BLOCK, dtype=np.int64)
    aux = np.zeros(1, dtype=np.uint64)
    G = drift * dt
    if not affine:
        for i in range(d):
            for j in range(d):
                sig[i, j] = sqdt * sig0[i, j]
    for t in range(trials.shape[0]):
        key = rng.stream_key(seed, trials[t])
        aux[0] = 0
        pos = rng.BLOCK
        blk = 0
        for i in range(d):
            x[i] = x0[i]
        if record:
            for i in range(d):
                path[0, i] = x0[i]
        st = STATUS_CENSORED
        steps = nmax
        for k in range(nmax):
            if pos + d > rng.BLOCK:
                # blocks hold a whole number of steps when d divides BLOCK; otherwise
                # the remaining slots are consumed across the block boundary
                for i in range(d):
                    if pos == rng.BLOCK:
                        rng.fill_normals(key, np.uint64(blk * rng.BLOCK), buf, zx, zf, aux, rej)
                        blk += 1
                        pos = 0
                    xi[i] = buf[pos]
                    pos += 1
            else:
                for i in range(d):
                    xi[i] = buf[pos + i]
                pos += d
            if affine:
                for i in range(d):
                    for j in range(d):
                        s = sig0[i, j]
                        for m in range(d):
                            s += x[m] * siglin[m, i, j]
                        sig[i, j] = sqdt * s
            big = 0.0
            for i in range(d):
                s = x[i]
                for j in range(d):
                    s += G[i, j] * x[j] + sig[i, j] * xi[j]
                xn[i] = s
                big = max(big, abs(s))
            if not big < 1e300:
                st = STATUS_NONFINITE
                steps = k
                break
            if kind == 0:
                out = xn[0] <= lo or xn[0] >= hi
            elif kind == 1:
                out = _outside_ellipsoid(xn, c, Q)
            else:
                out = _outside_polytope(xn, H, hh)
            if out:
                sfrac = _crossing(kind, x, xn, c, Q, H, hh, lo, hi)
                for i in range(d):
                    yout[t, i] = x[i] + sfrac * (xn[i] - x[i])
                tau[t] = (k + sfrac) * dt
                st = STATUS_EXITED
                steps = k + 1
                if record:
                    for i in range(d):
                        path[k + 1, i] = yout[t, i]
                break
            for i in range(d):
                x[i] = xn[i]
            if record:
                for i in range(d):
                    path[k + 1, i] = x[i]
        status[t] = st
        if st == STATUS_CENSORED:
            tau[t] = nmax * dt
            for i in range(d):
                yout[t, i] = x[i]
        elif st == STATUS_NONFINITE:
            tau[t] = steps * dt
            for i in range(d):
                yout[t, i] = np.nan
        if record:
            # last row carries the number of recorded steps
            path[path.shape[0] - 1, 0] = steps


def _kernel_args(sys, mode, x0, domain, params):
    x0 = np.ascontiguousarray(np.atleast_1d(np.asarray(x0, dtype=float)))
    if x0.shape != (sys.d,):
        raise ValueError(f"x0 must have {sys.d} entries")
    if not bool(domain.contains(x0[None, :])[0]):
        raise PreconditionError(f"x0 = {x0.tolist()} is not inside the domain")
    t_max = params.horizon(sys, mode)
    nmax = int(math.ceil(t_max / params.dt))
    diff = sys.diffusion
    lin = diff.linear if diff.linear is not None else np.zeros((sys.d, sys.d, sys.d))
    return dict(
        seed=np.uint64(params.seed), drift=np.ascontiguousarray(sys.drift_matrix(mode)),
        sig0=np.ascontiguousarray(diff.sigma0), siglin=np.ascontiguousarray(lin),
        affine=diff.linear is not None, x0=x0, sqdt=math.sqrt(params.eps * params.dt),
        dt=float(params.dt), nmax=nmax, zx=rng.ZIG_X, zf=rng.ZIG_F,
    ), _domain_arrays(domain)


def _run_chunk(trials, kw, dom):
    m = len(trials)
    d = kw["x0"].shape[0]
    status = np.empty(m, dtype=np.int8)
    tau = np.empty(m)
    y = np.empty((m, d))
    kind, c, Q, H, hh, lo, hi = dom
    _exit_kernel(trials, kw["seed"], kw["drift"], kw["sig0"], kw["siglin"], kw["affine"],
                 kind, c, Q, H, hh, lo, hi, kw["x0"], kw["sqdt"], kw["dt"], kw["nmax"],
                 kw["zx"], kw["zf"], status, tau, y, np.empty((1, d)), False)
    return status, tau, y


def simulate_exits(sys, mode, x0, domain, params, workers=None):
    """Run ``params.trials`` independent trials and collect first exits.

    Raises SimulationError (with the trial index) if any trial overflows.
    """
    kw, dom = _kernel_args(sys, mode, x0, domain, params)
    n = params.trials
    chunks = [np.arange(s, min(s + CHUNK, n), dtype=np.uint64) for s in range(0, n, CHUNK)]
    workers = worker_count() if workers is None else max(1, int(workers))
    if workers == 1 or len(chunks) == 1:
        parts = [_run_chunk(ch, kw, dom) for ch in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ch: _run_chunk(ch, kw, dom), chunks))
    status = np.concatenate([p[0] for p in parts])
    tau = np.concatenate([p[1] for p in parts])
    y = np.concatenate([p[2] for p in parts])
    bad = np.flatnonzero(status == STATUS_NONFINITE)
    if bad.size:
        raise SimulationError(f"non-finite state in trial {int(bad[0])}", trial=int(bad[0]))
    return ExitSample(status, tau, y, mode, params)


def simulate_trajectory(sys, mode, x0, domain, params, trial_index=0):
    """One trial with its full path; returns ``(DiscretePath, ExitEvent)``.

    Uses the same noise as trial ``trial_index`` of :func:`simulate_exits`.
    """
    from .action import DiscretePath

    kw, (kind, c, Q, H, hh, lo, hi) = _kernel_args(sys, mode, x0, domain, params)
    d = sys.d
    path = np.zeros((kw["nmax"] + 2, d))
    status = np.empty(1, dtype=np.int8)
    tau = np.empty(1)
    y = np.empty((1, d))
    _exit_kernel(np.array([trial_index], dtype=np.uint64), kw["seed"], kw["drift"], kw["sig0"],
                 kw["siglin"], kw["affine"], kind, c, Q, H, hh, lo, hi, kw["x0"], kw["sqdt"],
                 kw["dt"], kw["nmax"], kw["zx"], kw["zf"], status, tau, y, path, True)
    steps = int(path[-1, 0])
    st = int(status[0])
    if st == STATUS_NONFINITE:
        raise SimulationError(f"non-finite state in trial {trial_index}", trial=trial_index)
    states = path[:steps + 1].copy()
    times = np.arange(steps + 1) * params.dt
    if st == STATUS_EXITED:
        times[-1] = tau[0]
    event = ExitEvent(st == STATUS_EXITED, float(tau[0]), y[0].copy(), st == STATUS_CENSORED)
    return DiscretePath(times, states), event


def exit_stats(sample, domain, section):
    """Classify a sample's exits against ``section``."""
    pts = sample.exit_points
    inside = domain.in_section(section, pts) if len(pts) else np.zeros(0, dtype=bool)
    n = sample.trials
    hits = int(np.count_nonzero(inside))
    q = hits / n
    return ExitStats(section=section.name, trials=n, hits=hits, exits=len(pts),
                     censored=int(np.count_nonzero(sample.censored)), q_hat=q,
                     ci95=1.96 * math.sqrt(q * (1.0 - q) / n),
                     censored_fraction=sample.censored_fraction, exit_points=pts,
                     in_section=inside)


def check_censoring(sample):
    if sample.censored_fraction > sample.params.censor_limit:
        raise HorizonError(
            f"{sample.censored_fraction:.2%} of trials hit t_max (limit "
            f"{sample.params.censor_limit:.2%}); increase t_max")


def estimate_exit_probability(sys, mode, x0, domain, section, params, sample=None):
    """Fraction of trials whose first exit lands in ``section``, with a 95% half-width.

    Censored trials count in the denominator only.
    """
    if sample is None:
        sample = simulate_exits(sys, mode, x0, domain, params)
    check_censoring(sample)
    return exit_stats(sample, domain, section)


def empirical_rate(q_hat, eps):
    """``-eps * log(q_hat)``; returns INFINITE_RATE when ``q_hat == 0``."""
    if not 0.0 <= q_hat <= 1.0:
        raise ValueError("q_hat must be a probability")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if q_hat == 0.0:
        return INFINITE_RATE
    return -eps * math.log(q_hat) + 0.0


@dataclass(frozen=True, eq=False)
class ExitHistogram:
    edges: np.ndarray
    counts: np.ndarray
    concentration: float
    exits: int


def concentration(domain, points, sigma_points, delta, metric="geodesic"):
    """Fraction of ``points`` within ``delta`` of the point set ``sigma_points``."""
    pts = np.atleast_2d(points)
    sig = np.atleast_2d(np.asarray(sigma_points, dtype=float))
    if metric == "geodesic":
        dist = np.min([domain.geodesic_distance(pts, np.broadcast_to(s, pts.shape)) for s in sig],
                      axis=0)
    elif metric == "euclidean":
        dist = np.min(np.linalg.norm(pts[:, None, :] - sig[None, :, :], axis=2), axis=1)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return float(np.mean(dist <= delta + 1e-12))


def exit_location_histogram(sys, mode, x0, domain, params, bins=32, sigma_points=None,
                            delta=0.0, metric="geodesic", sample=None):
    """Histogram of exit points over the boundary parameter, plus concentration near Sigma."""
    if sample is None:
        sample = simulate_exits(sys, mode, x0, domain, params)
    pts = sample.exit_points
    if len(pts) == 0:
        raise EmptySampleError("no uncensored exits to histogram")
    lo, hi = domain.parameter_range()
    if domain.dim == 1:
        edges = np.array([lo, domain.center[0], hi])
    else:
        edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(domain.boundary_parameter(pts), bins=edges)
    conc = float("nan") if sigma_points is None else concentration(domain, pts, sigma_points,
                                                                    delta, metric)
    return ExitHistogram(edges, counts, conc, len(pts))


@dataclass(frozen=True)
class TerminalFunctionalEstimate:
    f_hat: float
    J_hat: float
    se_f: float
    se_J: float
    censored: int
    phi_cap: float
    note: str = ""


def default_phi_cap(domain, phi):
    vals = np.asarray(phi(domain.boundary_samples(256)), dtype=float)
    finite = vals[np.isfinite(vals)]
    if len(finite) < len(vals):
        return math.inf
    return 10.0 * float(finite.max()) if len(finite) else 0.0


def estimate_terminal_functional(sys, mode, x0, domain, phi, params, phi_cap=None, sample=None):
    """Monte Carlo ``f = E exp(-phi(x(tau)) / eps)`` and ``J = -eps log f``.

    ``phi`` maps an (m, d) array of boundary points to m nonnegative values
    (``inf`` allowed). Censored trials contribute ``exp(-phi_cap / eps)``.
    """
    if sample is None:
        sample = simulate_exits(sys, mode, x0, domain, params)
    eps = params.eps
    vals = np.empty(sample.trials)
    ex = sample.exited
    if np.any(ex):
        ph = np.asarray(phi(sample.y[ex]), dtype=float)
        if np.any(ph < 0):
            raise ValueError("terminal cost must be nonnegative")
        vals[ex] = np.exp(-ph / eps)
    ncens = int(np.count_nonzero(~ex))
    note = ""
    if phi_cap is None:
        phi_cap = default_phi_cap(domain, phi)
    if ncens:
        vals[~ex] = math.exp(-phi_cap / eps)
        note = f"{ncens} censored trials scored with phi_cap = {phi_cap:g} (biased)"
    n = sample.trials
    f_hat = float(np.mean(vals))
    se_f = float(np.std(vals, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    if f_hat > 0:
        J = -eps * math.log(f_hat) + 0.0
        se_J = eps * se_f / f_hat
    else:
        J, se_J = INFINITE_RATE, math.inf
    return TerminalFunctionalEstimate(f_hat, J, se_f, se_J, ncens, phi_cap, note)


@dataclass(frozen=True)
class ControlCostEstimate:
    J_hat: float
    se: float
    running: float
    terminal: float
    censored: int


def evaluate_exit_control_cost(control, sys, mode, x0, domain, phi, params, running_cost=None,
                               phi_cap=None, batch=4096):
    """Monte Carlo cost of an exit-time control problem.

    Simulates ``d eta = control(t, eta) dt + sqrt(eps) sigma(eta) dW`` by
    Euler-Maruyama and averages ``int_0^{tau ^ T} L(eta, v) dt + phi(eta(tau))``.
    ``control(t, X)`` receives the (m, d) array of live states. The running
    cost defaults to the mode's Lagrangian, integrated with the left-point rule
    (the exit step is prorated by the crossing fraction).
    """
    from .action import lagrangian

    if running_cost is None:
        def running_cost(X, V):
            return lagrangian(sys, mode, X, V)
    kw, _ = _kernel_args(sys, mode, x0, domain, params)
    nmax, dt, sq = kw["nmax"], params.dt, kw["sqdt"]
    if phi_cap is None:
        phi_cap = default_phi_cap(domain, phi)
    totals = np.empty(params.trials)
    run_tot = np.empty(params.trials)
    ncens = 0
    for start in range(0, params.trials, batch):
        idx = np.arange(start, min(start + batch, params.trials))
        m = len(idx)
        streams = rng.TrialStreams(params.seed, idx)
        eta = np.tile(kw["x0"], (m, 1))
        alive = np.ones(m, dtype=bool)
        cost = np.zeros(m)
        term = np.zeros(m)
        for k in range(nmax):
            xi = streams.draw(sys.d)
            live = np.flatnonzero(alive)
            if live.size == 0:
                break
            X = eta[live]
            V = np.asarray(control(k * dt, X), dtype=float).reshape(len(live), sys.d)
            Lk = running_cost(X, V)
            Xn = X + V * dt + sq * np.einsum("mij,mj->mi", sys.diffusion.sigma(X), xi[live])
            if not np.all(np.isfinite(Xn)):
                bad = live[np.flatnonzero(~np.all(np.isfinite(Xn), axis=1))[0]]
                raise SimulationError(f"non-finite state in trial {int(idx[bad])}",
                                      trial=int(idx[bad]))
            out = ~domain.contains(Xn)
            frac = np.ones(len(live))
            if np.any(out):
                s = domain.segment_exit(X[out], Xn[out])
                frac[out] = s
                Y = X[out] + s[:, None] * (Xn[out] - X[out])
                term[live[out]] = np.asarray(phi(Y), dtype=float)
                alive[live[out]] = False
            cost[live] += Lk * dt * frac
            eta[live] = Xn
        if np.any(alive):
            ncens += int(np.count_nonzero(alive))
            term[alive] = phi_cap
        totals[idx] = cost + term
        run_tot[idx] = cost
    n = params.trials
    se = float(np.std(totals, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return ControlCostEstimate(float(np.mean(totals)), se, float(np.mean(run_tot)),
                               float(np.mean(totals - run_tot)), ncens)
