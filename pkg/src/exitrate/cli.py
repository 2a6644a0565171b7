"""Command-line driver: ``exitrate <subcommand> --config FILE [options]``.

Subcommands: verify, simulate, rate, exit-profile, pde-check, codesign, all.
Every run writes ``report.json`` and/or plot-ready CSV files to the output
directory. Numbers in CSV files are written with ``repr`` so equal inputs give
byte-identical files; ``EXITRATE_THREADS`` changes speed only.
"""
import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .action import exit_set, quasipotential_profile, rate_to_section
from .codesign import solve_codesign
from .config import config_hash, load_config
from .errors import ConfigurationError, ExitRateError
from .pde import Grid1D, Grid2D, hjb_residual, log_transform, solve_exit_bvp
from .sde import (empirical_rate, estimate_exit_probability,
                  exit_location_histogram, simulate_exits)
from .system import verify_domain_attraction, verify_gain_tuple

SUBCOMMANDS = ("verify", "simulate", "rate", "exit-profile", "pde-check", "codesign", "all")
_ORDER = ("verify", "rate", "exit-profile", "simulate", "pde-check", "codesign")

RATES_HEADER = ["mode", "section", "epsilon", "trials", "q_hat", "ci95", "emp_rate",
                "censored_frac", "seed"]


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def _eps_tag(eps):
    return repr(float(eps))


class Run:
    """State of one invocation: config, output location, collected results and errors."""

    def __init__(self, cfg, sections=None):
        self.cfg = cfg
        self.sys = cfg.build_system()
        self.domain = cfg.build_domain()
        self.x0 = np.asarray(cfg.x0, dtype=float)
        self.settings = cfg.action_settings()
        self.modes = cfg.mode_list()
        secs = cfg.section_objects()
        if sections is not None:
            secs = [s for s in secs if s.name in sections]
        self.sections = secs
        self.out = cfg.output.directory
        self.csv = cfg.output.format in ("csv", "both")
        self.report = {"tool": "exitrate", "version": __version__,
                       "config_hash": config_hash(cfg), "config": cfg.to_dict(),
                       "errors": [], "timings": {}}
        self.rates = {}
        self.exit_sets = {}
        self.mc = {}

    def error(self, analysis, exc, **where):
        self.report["errors"].append({"analysis": analysis, "type": type(exc).__name__,
                                      "message": str(exc), **where})

    def path(self, name):
        return os.path.join(self.out, name)

    # analyses

    def verify(self):
        cfg = self.cfg
        gain = verify_gain_tuple(self.sys, margin=cfg.verify.margin, tol=cfg.verify.tol)
        att = {}
        for j in self.modes:
            try:
                r = verify_domain_attraction(self.sys, j, self.domain, cfg.verify.n_probes)
                att[str(j)] = {"passed": r.passed, "worst_value": r.worst_value,
                               "worst_point": list(r.worst_point), "n_probes": r.n_probes,
                               "skipped": r.skipped}
            except ExitRateError as exc:
                self.error("verify", exc, mode=j)
        self.report["verify"] = {"gain_tuple": gain.as_dict(), "domain_attraction": att}

    def rate(self):
        entries = []
        for j in self.modes:
            for s in self.sections:
                try:
                    r = rate_to_section(self.sys, j, self.x0, self.domain, s, self.settings)
                except ExitRateError as exc:
                    self.error("rate", exc, mode=j, section=s.name)
                    continue
                self.rates[(j, s.name)] = r.value
                entries.append({"mode": j, "section": s.name, "I": r.value, "T": r.T,
                                "converged": r.converged, "restarts_used": r.restarts_used,
                                "exit_point": r.y, "values_by_T": r.values_by_T,
                                "warnings": list(r.warnings)})
                if self.csv:
                    p = r.path
                    write_csv(self.path(f"path_{j}_{s.name}.csv"),
                              ["t"] + [f"x_{i + 1}" for i in range(self.sys.d)],
                              [[t, *x] for t, x in zip(p.times, p.states)])
        self.report["rate"] = entries

    def exit_profile(self):
        entries = []
        for j in self.modes:
            try:
                prof = quasipotential_profile(self.sys, j, self.domain, None, self.settings)
            except ExitRateError as exc:
                self.error("exit-profile", exc, mode=j)
                continue
            sigma = exit_set(prof, self.settings.tie_tol)
            self.exit_sets[j] = sigma
            entries.append({"mode": j, "V_min": prof.v_min, "exit_set": sigma,
                            "flagged": int(prof.flagged.sum()), "samples": len(prof.values)})
            if self.csv:
                order = np.argsort(prof.params, kind="stable")
                write_csv(self.path(f"profile_{j}.csv"),
                          ["param"] + [f"y_{i + 1}" for i in range(self.sys.d)] + ["V"],
                          [[prof.params[k], *prof.points[k], prof.values[k]] for k in order])
        self.report["exit_profile"] = entries

    def simulate(self):
        rows, entries, conv = [], [], []
        cfg = self.cfg
        for j in self.modes:
            for eps in cfg.epsilon:
                params = cfg.sim_params(eps)
                try:
                    sample = simulate_exits(self.sys, j, self.x0, self.domain, params)
                except ExitRateError as exc:
                    self.error("simulate", exc, mode=j, epsilon=eps)
                    continue
                if self.csv:
                    ex = np.flatnonzero(sample.exited)
                    write_csv(self.path(f"exits_{j}_{_eps_tag(eps)}.csv"),
                              ["trial", "tau"] + [f"y_{i + 1}" for i in range(self.sys.d)],
                              [[int(k), sample.tau[k], *sample.y[k]] for k in ex])
                hist = {}
                try:
                    h = exit_location_histogram(
                        self.sys, j, self.x0, self.domain, params, cfg.sim.histogram_bins,
                        self.exit_sets.get(j), cfg.sim.concentration_delta, sample=sample)
                    hist = {"edges": h.edges, "counts": h.counts, "exits": h.exits,
                            "concentration": h.concentration if j in self.exit_sets else None,
                            "delta": cfg.sim.concentration_delta}
                except ExitRateError as exc:
                    self.error("simulate", exc, mode=j, epsilon=eps)
                for s in self.sections:
                    try:
                        st = estimate_exit_probability(self.sys, j, self.x0, self.domain, s,
                                                       params, sample=sample)
                    except ExitRateError as exc:
                        self.error("simulate", exc, mode=j, section=s.name, epsilon=eps)
                        continue
                    er = empirical_rate(st.q_hat, eps)
                    self.mc[(j, s.name, eps)] = st
                    rows.append([j, s.name, eps, st.trials, st.q_hat, st.ci95, er,
                                 st.censored_fraction, params.seed])
                    conv.append({"mode": j, "section": s.name, "epsilon": eps, "emp_rate": er,
                                 "I": self.rates.get((j, s.name))})
                entries.append({"mode": j, "epsilon": eps, "seed": params.seed,
                                "censored_fraction": sample.censored_fraction,
                                "histogram": hist})
        if self.csv:
            write_csv(self.path("rates.csv"), RATES_HEADER, rows)
        self.report["simulate"] = {"rates": [dict(zip(RATES_HEADER, r)) for r in rows],
                                   "runs": entries, "convergence": conv}

    def pde_check(self):
        cfg = self.cfg
        if not cfg.pde.enabled:
            self.report["pde_check"] = {"skipped": "disabled in config"}
            return
        if self.sys.d > 2:
            self.report["pde_check"] = {"skipped": "state dimension above 2"}
            return
        entries = []
        grid_cls = Grid1D if self.sys.d == 1 else Grid2D
        try:
            grid = grid_cls.for_domain(self.domain, cfg.pde.h)
        except ExitRateError as exc:
            self.error("pde-check", exc)
            return
        for j in self.modes:
            for eps in cfg.epsilon:
                for s in self.sections:
                    def phi(y, s=s):
                        return np.where(self.domain.in_section(s, y), 0.0, np.inf)
                    try:
                        f = solve_exit_bvp(self.sys, j, eps, self.domain, grid, phi)
                        J = log_transform(f)
                        res = hjb_residual(J, self.sys, j, band=cfg.pde.band)
                    except ExitRateError as exc:
                        self.error("pde-check", exc, mode=j, section=s.name, epsilon=eps)
                        continue
                    fx = float(f.at(self.x0)[0])
                    e = {"mode": j, "section": s.name, "epsilon": eps, "f_x0": fx,
                         "J_x0": -eps * math.log(fx) if fx > 0 else math.inf,
                         "residual": res.as_dict(), "solver": f.info}
                    st = self.mc.get((j, s.name, eps))
                    if st is not None:
                        se = math.sqrt(max(st.q_hat * (1 - st.q_hat), 1e-300) / st.trials)
                        e["mc_q_hat"] = st.q_hat
                        e["mc_z"] = (fx - st.q_hat) / se
                    entries.append(e)
        self.report["pde_check"] = entries

    def codesign(self):
        prob = self.cfg.codesign_problem()
        if prob is None:
            self.report["codesign"] = {"skipped": "no codesign block in config"}
            return
        try:
            res = solve_codesign(prob)
        except ExitRateError as exc:
            self.error("codesign", exc)
            return
        n = self.sys.n
        table = []
        for r in res.rows:
            table.append([r.candidate, r.I0, *r.I, *r.gamma,
                          r.score_literal if res.orientation == "paper-literal"
                          else r.score_reliability, r.candidate == res.selected])
        if self.csv:
            write_csv(self.path("codesign.csv"),
                      ["candidate", "I0"] + [f"I_{i}" for i in range(1, n + 1)]
                      + [f"gamma_{i}" for i in range(1, n + 1)] + ["score", "selected"], table)
        self.report["codesign"] = {
            "orientation": res.orientation, "note": res.note, "I0_star": res.I0_star,
            "I0_candidate": res.I0_index, "selected": res.selected,
            "selected_paper_literal": res.selected_literal,
            "selected_reliability": res.selected_reliability,
            "rows": [{"candidate": r.candidate, "I0": r.I0, "I": r.I, "gamma": r.gamma,
                      "gamma_max": r.score_literal, "min_weighted_I": r.score_reliability,
                      "converged": r.converged} for r in res.rows],
            "rejected": list(res.rejected)}


def apply_overrides(cfg, mode=None, epsilon=None, seed=None, out=None, fmt=None):
    if mode is not None:
        cfg = replace(cfg, modes=[mode])
    if epsilon is not None:
        cfg = replace(cfg, epsilon=[float(epsilon)])
    if seed is not None:
        cfg = replace(cfg, sim=replace(cfg.sim, seed=int(seed)))
    if out is not None or fmt is not None:
        cfg = replace(cfg, output=replace(cfg.output, directory=out or cfg.output.directory,
                                          format=fmt or cfg.output.format))
    return cfg


def run(cfg, subcommand, section=None):
    """Execute a subcommand; returns ``(report, exit_status)``."""
    if subcommand not in SUBCOMMANDS:
        raise ConfigurationError(f"unknown subcommand {subcommand!r}")
    n = len(cfg.system.channels)
    for m in cfg.mode_list():
        if not 0 <= m <= n:
            raise ConfigurationError(f"mode {m} outside 0..{n}")
    if section is not None and section not in cfg.section_names:
        raise ConfigurationError(f"unknown section {section!r}")
    r = Run(cfg, None if section is None else [section])
    os.makedirs(r.out, exist_ok=True)
    steps = _ORDER if subcommand == "all" else (subcommand,)
    r.report["subcommand"] = subcommand
    for step in steps:
        t0 = time.perf_counter()
        getattr(r, step.replace("-", "_"))()
        r.report["timings"][step] = time.perf_counter() - t0
    if cfg.output.format in ("json", "both"):
        with open(r.path("report.json"), "w", encoding="utf-8") as fh:
            json.dump(_jsonable(r.report), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return r.report, (1 if r.report["errors"] else 0)


def build_parser():
    p = argparse.ArgumentParser(prog="exitrate", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="JSON configuration file")
    p.add_argument("--mode", type=int, help="restrict to one mode (0 = nominal)")
    p.add_argument("--section", help="restrict to one named boundary section")
    p.add_argument("--epsilon", type=float, help="replace the epsilon list by one value")
    p.add_argument("--seed", type=int, help="override the simulation seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=("json", "csv", "both"), dest="fmt")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = apply_overrides(cfg, args.mode, args.epsilon, args.seed, args.out, args.fmt)
        report, status = run(cfg, args.subcommand, args.section)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for e in report["errors"]:
        where = ", ".join(f"{k}={e[k]}" for k in ("mode", "section", "epsilon") if k in e)
        print(f"{e['analysis']} [{where}] {e['type']}: {e['message']}", file=sys.stderr)
    print(f"exitrate {args.subcommand}: {len(report['errors'])} error(s); outputs in "
          f"{cfg.output.directory}")
    return status


if __name__ == "__main__":
    sys.exit(main())
