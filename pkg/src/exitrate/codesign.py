"""Selection of a gain tuple from a finite candidate set by exit-rate criteria.

For every valid candidate K the nominal rate I_0(K) and the failure-mode rates
I_i(K) are computed with :func:`exitrate.action.rate_to_section`. With
``I0* = max_K I_0(K)`` and weights ``w``, the slack of candidate K is
``gamma_i(K) = (I_i(K) - I0*) / w_i``.

Two scalarizations are offered:

* ``paper-literal``: pick the candidate minimizing ``max_i gamma_i`` (this
  rewards small failure-mode rates, i.e. likely exits);
* ``reliability``: pick the candidate maximizing ``min_i I_i / w_i``.

Ties go to the lowest candidate index.
"""
from dataclasses import dataclass, field

import numpy as np

from .action import ActionSettings, rate_to_section
from .domain import BoundarySection
from .errors import ConfigurationError, NonConvergenceError
from .system import verify_gain_tuple

ORIENTATIONS = ("paper-literal", "reliability")

ORIENTATION_NOTE = ("paper-literal orientation minimizes max_i gamma_i, which favors candidates "
                    "whose failure modes exit most easily; the reliability orientation "
                    "maximizes min_i I_i / w_i instead")


@dataclass(frozen=True, eq=False)
class CodesignProblem:
    system: object
    domain: object
    candidates: tuple
    weights: tuple
    x0: np.ndarray
    sections: tuple = None
    section0: BoundarySection = None
    orientation: str = "paper-literal"
    settings: ActionSettings = field(default_factory=ActionSettings)
    margin: float = 0.0

    def __post_init__(self):
        n = self.system.n
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (n,) or np.any(w <= 0):
            raise ConfigurationError(f"need {n} positive weights")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ConfigurationError("weights must sum to 1")
        if self.orientation not in ORIENTATIONS:
            raise ConfigurationError(f"orientation must be one of {ORIENTATIONS}")
        if not self.candidates:
            raise ConfigurationError("candidate list is empty")
        secs = self.sections
        if secs is None:
            secs = (BoundarySection.full(),) * n
        if len(secs) != n:
            raise ConfigurationError(f"need one section per channel ({n})")
        object.__setattr__(self, "sections", tuple(secs))
        if self.section0 is None:
            object.__setattr__(self, "section0", BoundarySection.full())
        object.__setattr__(self, "weights", tuple(float(v) for v in w))
        object.__setattr__(self, "x0", np.atleast_1d(np.asarray(self.x0, dtype=float)))
        cands = tuple(tuple(np.atleast_2d(np.asarray(K, dtype=float)) for K in c)
                      for c in self.candidates)
        object.__setattr__(self, "candidates", cands)

    def candidate_system(self, k):
        return self.system.with_gains(self.candidates[k])

    def screen(self):
        """Split candidates into valid indices and rejection records."""
        valid, rejected = [], []
        for k in range(len(self.candidates)):
            rep = verify_gain_tuple(self.candidate_system(k), margin=self.margin)
            if rep.passed:
                valid.append(k)
            else:
                bad = [j for j, ok in enumerate(rep.mode_passed) if not ok]
                rejected.append({"candidate": k, "failing_modes": bad,
                                 "abscissas": list(rep.abscissas)})
        return valid, rejected


@dataclass(frozen=True)
class CandidateRow:
    candidate: int
    I0: float
    I: tuple
    gamma: tuple
    score_literal: float
    score_reliability: float
    converged: bool


@dataclass(frozen=True, eq=False)
class CodesignResult:
    selected: int
    orientation: str
    I0_star: float
    I0_index: int
    rows: tuple
    rejected: tuple
    selected_literal: int
    selected_reliability: int
    note: str = ORIENTATION_NOTE

    def row(self, candidate):
        for r in self.rows:
            if r.candidate == candidate:
                return r
        raise KeyError(candidate)


def _rate(problem, sys, mode, section, k):
    try:
        return rate_to_section(sys, mode, problem.x0, problem.domain, section, problem.settings)
    except NonConvergenceError as exc:
        raise NonConvergenceError(f"candidate {k}, mode {mode}: {exc}",
                                  best_value=exc.best_value) from exc


def nominal_rates(problem, indices=None):
    """Nominal (mode 0) rate of each candidate in ``indices`` (default: valid ones)."""
    if indices is None:
        indices, _ = problem.screen()
    return {k: _rate(problem, problem.candidate_system(k), 0, problem.section0, k)
            for k in indices}


def nominal_value(problem, _cache=None):
    """``(I0*, index)``: the largest nominal rate over valid candidates, first index on ties."""
    valid, _ = problem.screen()
    if not valid:
        raise ConfigurationError("no candidate passes the gain-class check")
    res = _cache if _cache is not None else nominal_rates(problem, valid)
    vals = np.array([res[k].value for k in valid])
    i = int(np.argmax(vals))
    return float(vals[i]), valid[i]


def failure_rates(problem, candidate):
    """``(I_1, ..., I_n)`` for one candidate, each toward its section."""
    sys = problem.candidate_system(candidate)
    return tuple(_rate(problem, sys, i, problem.sections[i - 1], candidate)
                 for i in range(1, sys.n + 1))


def solve_codesign(problem):
    valid, rejected = problem.screen()
    if not valid:
        raise ConfigurationError("no candidate passes the gain-class check")
    nominal = nominal_rates(problem, valid)
    I0_star, I0_idx = nominal_value(problem, nominal)
    w = np.asarray(problem.weights)
    rows = []
    for k in valid:
        fr = failure_rates(problem, k)
        I = np.array([r.value for r in fr])
        gamma = (I - I0_star) / w
        rows.append(CandidateRow(
            candidate=k, I0=float(nominal[k].value), I=tuple(float(v) for v in I),
            gamma=tuple(float(g) for g in gamma), score_literal=float(np.max(gamma)),
            score_reliability=float(np.min(I / w)),
            converged=bool(nominal[k].converged and all(r.converged for r in fr))))
    lit = np.array([r.score_literal for r in rows])
    rel = np.array([r.score_reliability for r in rows])
    sel_lit = rows[int(np.argmin(lit))].candidate
    sel_rel = rows[int(np.argmax(rel))].candidate
    selected = sel_lit if problem.orientation == "paper-literal" else sel_rel
    return CodesignResult(selected, problem.orientation, I0_star, I0_idx, tuple(rows),
                          tuple(rejected), sel_lit, sel_rel)
