"""Command-line experiment runner.

Every subcommand reads one TOML config (defaults fill the gaps), writes CSV
and JSON files into ``--out`` and finishes with a ``<command>_manifest.json``
listing the config hash, code version, grid, timing and the files written.
Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, config_hash, load_config, parse_override
from .control import SolverError
from .lagrange import (
    BracketError,
    InfeasibleTarget,
    MonotonicityError,
    TableConfig,
    min_rate_given_association,
    min_rate_given_mass_single_temp,
    table_experiments,
)
from .ldp import InfeasibleMeasure, association_of, nu_sym, rate_I_unsym, rate_J, weighted_symmetry_discrepancy
from .measures import tv_distance
from .model import franz_potential, make_grid, tabulated_potential
from .simulate import (
    AbsorbingStateError,
    checkpoint_times,
    ins_accumulators,
    pt_accumulators,
    replica_seeds,
    simulate_ins,
    simulate_pt,
)
from .swapchain import ProductChain, ins_generator, symmetrized_measure

log = logging.getLogger("infswap")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3
SOLVER_ERRORS = (SolverError, BracketError, MonotonicityError, AbsorbingStateError, np.linalg.LinAlgError)


def sci(v: float) -> str:
    """Five significant digits in scientific notation."""
    return f"{v:.4e}"


def raw(v: float) -> str:
    return repr(float(v))


def build_chain(cfg, temps=None, n=None) -> ProductChain:
    g = cfg["grid"]
    grid = make_grid(g["lo"], g["hi"], g["n"] if n is None else n)
    pot = cfg["potential"]
    if "values" in pot:
        if grid.n != len(pot["values"]):
            raise ConfigError("'potential.values' length does not match the grid used by this command")
        potential = tabulated_potential(grid, pot["values"])
    else:
        potential = franz_potential(grid, pot["franz_alpha"])
    try:
        return ProductChain(grid, potential, cfg["temperatures"] if temps is None else temps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


class Run:
    """Collects output paths and writes the manifest."""

    def __init__(self, command: str, cfg: dict, out: Path):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.files: list[str] = []
        self.started = time.perf_counter()
        out.mkdir(parents=True, exist_ok=True)
        self.manifest_name = f"{command}_manifest.json"

    def write_csv(self, name: str, header, rows):
        path = self.out / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        self.files.append(name)

    def write_json(self, name: str, payload: dict):
        payload = dict(payload, manifest=self.manifest_name)
        with open(self.out / name, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.files.append(name)

    def finish(self, grid: dict):
        manifest = {
            "command": self.command,
            "config_sha256": config_hash(self.cfg),
            "config": self.cfg,
            "version": __version__,
            "grid": grid,
            "seconds": round(time.perf_counter() - self.started, 3),
            "outputs": self.files,
        }
        with open(self.out / self.manifest_name, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


# -- simulate ------------------------------------------------------------------

def _replica(args):
    process, chain, a, horizon, seed, initial, times = args
    if process == "ins":
        traj, _ = simulate_ins(chain, horizon, seed, initial)
        return [ins_accumulators(chain, traj, t) for t in times]
    traj, _ = simulate_pt(chain, a, horizon, seed, initial)
    return [pt_accumulators(chain, traj, t) for t in times]


def cmd_simulate(cfg, out: Path):
    sim = cfg["simulate"]
    chain = build_chain(cfg)
    if sim["process"] == "ins" and chain.K < 2:
        raise ConfigError("infinite swapping needs at least two temperatures")
    if sim["process"] == "pt" and chain.K != 2:
        raise ConfigError("parallel tempering needs exactly two temperatures")
    initial = chain.index(sim["initial"]) if "initial" in sim else 0
    times = checkpoint_times(float(sim["horizon"]), int(sim["checkpoints"]))
    seeds = replica_seeds(int(cfg["seed"]), int(sim["replicas"]))
    tasks = [(sim["process"], chain, float(sim["a"]), float(sim["horizon"]), s, initial, times) for s in seeds]
    if cfg["jobs"] > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg["jobs"], len(tasks))) as pool:
            results = list(pool.map(_replica, tasks))
    else:
        results = [_replica(t) for t in tasks]

    run = Run("simulate", cfg, out)
    mu = chain.mu
    nperm = len(chain.perms)
    header = (["replica", "time", "tv_eta"] + [f"rho_{i}" for i in range(nperm)]
              + [f"beta_{k + 1}" for k in range(chain.K)])
    rows = []
    merged = []
    for i, t in enumerate(times):
        acc = results[0][i]
        for r, res in enumerate(results):
            a = res[i]
            rows.append([r, raw(t), raw(tv_distance(a.eta, mu))] + [raw(v) for v in a.rho] + [raw(v) for v in a.beta])
            if r:
                acc = acc.merge(a)
        merged.append(acc)
        rows.append(["all", raw(t), raw(tv_distance(acc.eta, mu))] + [raw(v) for v in acc.rho]
                    + [raw(v) for v in acc.beta])
    run.write_csv("simulate_curves.csv", header, rows)

    target_nu = symmetrized_measure(chain) if sim["process"] == "ins" else None
    mrows = []
    for t, acc in zip(times, merged):
        for x in range(chain.size):
            mrows.append([raw(t), x, *chain.states[x].tolist(), raw(acc.nu[x]), raw(acc.eta[x]), raw(mu[x])])
    run.write_csv("simulate_measures.csv",
                  ["time", "state"] + [f"x_{k + 1}" for k in range(chain.K)] + ["nu", "eta", "mu"], mrows)

    final = merged[-1]
    summary = {
        "process": sim["process"],
        "replicas": len(results),
        "horizon": float(sim["horizon"]),
        "rho": final.rho.tolist(),
        "beta": final.beta.tolist(),
        "tv_eta_mu": tv_distance(final.eta, mu),
        "per_replica": [
            {"rho": res[-1].rho.tolist(), "beta": res[-1].beta.tolist(),
             "tv_eta_mu": tv_distance(res[-1].eta, mu)}
            for res in results
        ],
    }
    if target_nu is not None:
        summary["tv_nu_mubar"] = tv_distance(final.nu, target_nu)
    run.write_json("simulate_summary.json", summary)
    run.finish(chain.grid.describe())


# -- tables --------------------------------------------------------------------

def _wide(deltas, alphas, table):
    header = ["delta"]
    for a in alphas:
        header += [f"alpha={a:g}", f"alpha={a:g}_raw"]
    rows = []
    for d in deltas:
        row = [f"{d:g}"]
        for a in alphas:
            row += [sci(table[d][a]), raw(table[d][a])]
        rows.append(row)
    return header, rows


def cmd_tables(cfg, out: Path):
    t = cfg["tables"]
    alphas = tuple(float(a) for a in t["alphas"])
    deltas = tuple(float(d) for d in t["deltas"])
    g = cfg["grid"]
    tc = TableConfig(alphas=alphas, deltas=deltas, temps=tuple(float(x) for x in cfg["temperatures"]),
                     lo=float(g["lo"]), hi=float(g["hi"]), n=int(g["n"]), tol=float(t["tol"]))
    if len(tc.temps) != 2:
        raise ConfigError("tables need exactly two temperatures")
    data = table_experiments(tc, jobs=cfg["jobs"])
    run = Run("tables", cfg, out)
    run.write_csv("table1_kappa.csv", ["alpha", "kappa", "kappa_raw"],
                  [[f"{a:g}", sci(data["kappa"][a]), raw(data["kappa"][a])] for a in alphas])
    run.write_csv("table2_rates.csv", *_wide(deltas, alphas, data["rate"]))
    run.write_csv("table3_normalized.csv", *_wide(deltas, alphas, data["normalized"]))
    run.write_json("tables_meta.json", {**data["meta"], "cells": data["cells"]})
    run.finish(data["meta"]["grid"])


# -- value function ------------------------------------------------------------

def cmd_value_function(cfg, out: Path):
    vf = cfg["value_function"]
    chain = build_chain(cfg, temps=[vf["temperature"]], n=vf["n"])
    res = min_rate_given_mass_single_temp(chain, delta=float(vf["delta"]), tol=float(vf["tol"]))
    W = res.extra["W"]
    right, left = res.extra["right_tilt"], res.extra["left_tilt"]
    run = Run("value_function", cfg, out)
    rows = [[raw(x), raw(w), raw(r), raw(l)] for x, w, r, l in zip(chain.grid.points, W, right, left)]
    run.write_csv("value_function.csv", ["x", "W", "right_tilt", "left_tilt"], rows)
    run.write_json("value_function_summary.json", {
        "delta": float(vf["delta"]),
        "temperature": float(vf["temperature"]),
        "kappa": res.extra["kappa"],
        "target": res.target,
        "achieved": res.achieved,
        "rate": res.rate,
        "multiplier": res.multiplier,
        "iterations": res.iterations,
        "tilt_convention": "exp(W(neighbour) - W(x)); controlled rate = rate / tilt",
    })
    run.finish(chain.grid.describe())


# -- diagnose ------------------------------------------------------------------

def cmd_diagnose(cfg, out: Path):
    d = cfg["diagnose"]
    chain = build_chain(cfg)
    if chain.K != 2:
        raise ConfigError("diagnose needs exactly two temperatures")
    gen = ins_generator(chain)
    rows, cells = [], []
    for w1 in d["w1"]:
        res = min_rate_given_association(chain, [w1, 1 - w1], tol=float(d["tol"]), generator=gen)
        rows.append([raw(w1), raw(1 - w1), sci(res.rate), raw(res.rate), sci(res.distance), raw(res.distance),
                     raw(res.multiplier)])
        cells.append({"w1": w1, "rate": res.rate, "tv_image_mu": res.distance, "multiplier": res.multiplier,
                      "iterations": res.iterations})
    run = Run("diagnose", cfg, out)
    run.write_csv("diagnose.csv", ["w1", "w2", "rate", "rate_raw", "tv_image_mu", "tv_image_mu_raw", "multiplier"],
                  rows)
    run.write_json("diagnose_summary.json", {"cells": cells})
    run.finish(chain.grid.describe())


# -- rate ----------------------------------------------------------------------

def _read_measure(path: str) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read measure file {path}: {exc}") from exc
    for col in ("measure", "nu", "eta", "gamma"):
        if rows and col in rows[0]:
            try:
                return np.array([float(r[col]) for r in rows])
            except ValueError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
    raise ConfigError(f"{path}: need a column named measure, nu, eta or gamma")


def cmd_rate(cfg, out: Path):
    r = cfg["rate"]
    chain = build_chain(cfg)
    if chain.K < 2:
        raise ConfigError("rate evaluation needs at least two temperatures")
    if "measure" in r:
        nu = np.asarray(r["measure"], dtype=float)
    elif "measure_file" in r:
        nu = _read_measure(r["measure_file"])
    else:
        nu = chain.mu.copy() if r["kind"] == "I" else symmetrized_measure(chain).copy()
    if nu.shape != (chain.size,) or np.any(nu < 0) or abs(nu.sum() - 1) > 1e-10:
        raise ConfigError(f"'rate' measure must be a probability vector of length {chain.size}")
    result = {"kind": r["kind"]}
    if r["kind"] == "J":
        value = rate_J(ins_generator(chain), nu)
        result["association"] = association_of(chain, nu).tolist()
    else:
        value = rate_I_unsym(chain, nu)
        result["weighted_symmetry_discrepancy"] = weighted_symmetry_discrepancy(chain, nu)
        if np.isfinite(value):
            result["rate_J_of_nu_sym"] = rate_J(ins_generator(chain), nu_sym(chain, nu))
    result["rate"] = value if np.isfinite(value) else "inf"
    run = Run("rate", cfg, out)
    run.write_csv("rate.csv", ["kind", "rate", "rate_raw"], [[r["kind"], sci(value), raw(value)]])
    run.write_json("rate_summary.json", result)
    run.finish(chain.grid.describe())


COMMANDS = {
    "simulate": cmd_simulate,
    "tables": cmd_tables,
    "value-function": cmd_value_function,
    "diagnose": cmd_diagnose,
    "rate": cmd_rate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="infswap", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="TOML config file")
        s.add_argument("--seed", type=int, help="overrides the config seed")
        s.add_argument("--jobs", type=int, help="worker processes (overrides config)")
        s.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. simulate.horizon=5e3")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = [parse_override(s) for s in args.set]
        if args.seed is not None:
            overrides.append((["seed"], args.seed))
        if args.jobs is not None:
            overrides.append((["jobs"], args.jobs))
        cfg = load_config(args.config, overrides)
        COMMANDS[args.command](cfg, args.out)
    except (ConfigError, InfeasibleTarget, InfeasibleMeasure) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except RuntimeError as exc:
        # table cells wrap their failures with the (alpha, delta) location
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
