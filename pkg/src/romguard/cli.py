"""Command-line entry point.

Every stage reads and writes files inside one run directory, named
``<experiment>-<config digest>-s<seed>`` under ``--out``, so the stages can be
re-run one at a time::

    romguard simulate --config run.ini
    romguard pod --config run.ini
    romguard sparsify --config run.ini      # ROM experiments
    romguard node-train --config run.ini    # neural-ODE experiment
    romguard cluster --config run.ini
    romguard train-markov --config run.ini
    romguard filter --config run.ini
    romguard bench --experiment linear-rom --seeds 0 1 2 3 4

Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import experiments as ex
from .assimilation import FilterDivergence
from .collocation import CollocationError
from .dynamics import IntegrationError, Trajectory
from .errormodel import ClusterModel, ErrorModelError, TransitionModel
from .graph import GraphError, read_edgelist, write_edgelist
from .node import NodeError, NodeParams
from .pod import PodBasis, PodError
from .sparsifier.barrier import BarrierError
from .sparsifier.dynopt import SparsifierError, SparsifierOutput

log = logging.getLogger("romguard")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

NUMERIC_ERRORS = (FilterDivergence, IntegrationError, SparsifierError, PodError, NodeError,
                  ErrorModelError, CollocationError, BarrierError, FloatingPointError,
                  np.linalg.LinAlgError)

# config.ini layout; keys may appear in any section when read back
SECTIONS = {
    "run": ("experiment", "seed", "sigma"),
    "graph": ("n", "p_edge"),
    "dynamics": ("horizon", "steps", "n_trajectories", "ic_low", "ic_high", "brus_a",
                 "brus_b", "brus_c", "brus_d", "brus_dx", "brus_dy"),
    "pod": ("k",),
    "sparsifier": ("colloc_nodes", "colloc_elements", "epsilon", "bound_sample_factor",
                   "alpha", "tau_L_fraction", "prune_tol", "stride"),
    "error_model": ("clusters", "markov_steps", "markov_lr"),
    "filter": ("particles", "zeta_x", "zeta_y", "tau_u", "noise_scaling", "max_recoveries",
               "tikhonov"),
    "node": ("node_observations", "node_alpha1", "node_iters", "node_lr", "node_init_std"),
}
_CASTS = {"int": int, "float": float, "str": str}


class ConfigError(ValueError):
    pass


def _field_types() -> dict[str, type]:
    return {f.name: _CASTS[f.type if isinstance(f.type, str) else f.type.__name__]
            for f in fields(ex.ExperimentConfig)}


def parse_config(text: str, overrides: dict | None = None) -> ex.ExperimentConfig:
    """Flatten INI sections into config fields; unknown keys are rejected."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    types = _field_types()
    raw: dict[str, str] = {}
    for sec in cp.sections():
        for key, val in cp.items(sec):
            if key not in types:
                raise ConfigError(f"unknown key {key!r} in section [{sec}]")
            if key in raw:
                raise ConfigError(f"key {key!r} given twice")
            raw[key] = val
    raw.update({k: str(v) for k, v in (overrides or {}).items() if v is not None})
    experiment = raw.pop("experiment", "linear-rom")
    if experiment not in ex.PRESETS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    try:
        vals = {k: types[k](v) for k, v in raw.items()}
        return ex.ExperimentConfig.defaults(experiment, **vals)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def format_config(cfg: ex.ExperimentConfig) -> str:
    d = cfg.to_dict()
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for sec, keys in SECTIONS.items():
        cp[sec] = {k: repr(d[k]) if isinstance(d[k], float) else str(d[k]) for k in keys}
    lines = []
    for sec in cp.sections():
        lines.append(f"[{sec}]")
        lines += [f"{k} = {v}" for k, v in cp[sec].items()]
        lines.append("")
    return "\n".join(lines)


def run_dir(cfg: ex.ExperimentConfig, out: str | Path) -> Path:
    return Path(out) / f"{cfg.experiment}-{cfg.digest()}-s{cfg.seed}"


# stage file helpers

def _need(path: Path, producer: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{path} is missing; run '{producer}' first")
    return path


def _load_ic(d: Path) -> list[np.ndarray]:
    return list(np.loadtxt(_need(d / "ic.csv", "simulate"), delimiter=",", ndmin=2))


def _load_trajs(d: Path, cfg: ex.ExperimentConfig) -> list[Trajectory]:
    return [Trajectory.from_csv(_need(d / f"traj_{i}.csv", "simulate"), "truth")
            for i in range(cfg.n_trajectories)]


def _load_graph(d: Path):
    return read_edgelist(_need(d / "graph.txt", "simulate"))


def _load_basis(d: Path) -> PodBasis:
    return PodBasis.load(_need(d / "pod.npz", "pod"))


def _load_sparsifier(d: Path, g) -> SparsifierOutput:
    _need(d / "sparsifier_manifest.json", "sparsify")
    return SparsifierOutput.load(d, g)


def _load_params(d: Path) -> NodeParams:
    _need(d / "node_params.json", "node-train")
    return NodeParams.load(d)


def _surrogate_inputs(d: Path, cfg: ex.ExperimentConfig, g):
    if cfg.experiment == "linear-node":
        return None, _load_params(d)
    return _load_sparsifier(d, g), None


# stages

def cmd_simulate(cfg, d: Path) -> None:
    g = ex.make_graph(cfg)
    system = ex.make_system(cfg, g)
    x0s = ex.initial_conditions(cfg, system.dim)
    write_edgelist(g, d / "graph.txt")
    np.savetxt(d / "ic.csv", np.array(x0s), delimiter=",", fmt="%.17g")
    for i, tr in enumerate(ex.simulate(cfg, system, x0s)):
        tr.to_csv(d / f"traj_{i}.csv")
    log.info("simulated %d trajectories on a graph with %d edges", len(x0s), g.m)


def cmd_pod(cfg, d: Path) -> None:
    basis = ex.fit_pod(cfg, _load_trajs(d, cfg))
    basis.save(d / "pod.npz")
    log.info("POD basis of rank %d", basis.k)


def cmd_sparsify(cfg, d: Path) -> None:
    if cfg.experiment == "linear-node":
        raise ConfigError("the neural-ODE experiment has no sparsification stage")
    g = _load_graph(d)
    sp = ex.sparsify(cfg, g, ex.make_system(cfg, g), _load_basis(d), _load_ic(d))
    sp.save(d)
    log.info("kept %d of %d edges", sp.edges_kept, g.m)


def cmd_node_train(cfg, d: Path) -> None:
    if cfg.experiment != "linear-node":
        raise ConfigError("node-train applies to the linear-node experiment only")
    params, history = ex.train_node(cfg, _load_trajs(d, cfg))
    params.save(d)
    np.savetxt(d / "node_history.csv", np.array(history)[:, None], delimiter=",", fmt="%.17g")
    log.info("neural ODE objective %.6g after %d iterations", history[-1], len(history) - 1)


def cmd_cluster(cfg, d: Path) -> None:
    g = _load_graph(d)
    system = ex.make_system(cfg, g)
    basis = _load_basis(d)
    params = _load_params(d) if cfg.experiment == "linear-node" else None
    rollout = ex.surrogate_rollout(cfg, basis, system, params)
    _, cm = ex.error_library(cfg, basis, system, _load_ic(d), rollout)
    cm.save(d)
    log.info("%d clusters", cm.p)


def cmd_train_markov(cfg, d: Path) -> None:
    _need(d / "labels.csv", "cluster")
    tm, hist = ex.fit_transitions(cfg, ClusterModel.load(d))
    tm.save(d)
    log.info("transition objective %.6g", hist[-1] if len(hist) else float("nan"))


def cmd_filter(cfg, d: Path) -> ex.Report:
    g = _load_graph(d)
    system = ex.make_system(cfg, g)
    basis = _load_basis(d)
    sp, params = _surrogate_inputs(d, cfg, g)
    _need(d / "q.csv", "train-markov")
    details = {} if sp is None else ex.sparsifier_details(cfg, g, sp)
    if params is not None and (d / "node_history.csv").exists():
        hist = np.loadtxt(d / "node_history.csv", delimiter=",", ndmin=1)
        details.update(node_objective=float(hist[-1]), node_iterations=int(hist.size - 1))
    rep, art = ex.evaluate(cfg, g, system, _load_ic(d), basis, ClusterModel.load(d),
                           TransitionModel.load(d), sp, params, details)
    write_outputs(d, cfg, rep, art)
    return rep


def write_outputs(d: Path, cfg, rep: ex.Report, art: ex.Artifacts) -> None:
    art.truth.to_csv(d / "truth.csv")
    art.surrogate.to_csv(d / "surrogate.csv")
    art.framework.to_csv(d / "estimate.csv")
    if art.rom is not None:
        art.rom.to_csv(d / "rom.csv")
    ex.emit_grid(art.framework, art.surrogate, art.truth, d / "grid.csv")
    (d / "report.json").write_text(rep.to_json())
    manifest = {"config": cfg.to_dict(), "seed": cfg.seed, "updates": rep.updates,
                "framework_rmse": rep.framework_rmse, "surrogate_rmse": rep.surrogate_rmse,
                "rom_rmse": rep.rom_rmse}
    (d / "filter_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True)
                                           + "\n")


TABLE_HEADER = ["experiment", "seed", "sigma", "surrogate_rmse", "framework_rmse", "rom_rmse",
                "updates", "edges_original", "edges_kept", "k", "status"]


def cmd_bench(base: ex.ExperimentConfig, out: Path, seeds, sigmas) -> int:
    """Seed by perturbation sweep; one table row per run, failures recorded as rows."""
    rows, failed = [], False
    for sigma in sigmas:
        for seed in seeds:
            cfg = ex.ExperimentConfig(**{**base.to_dict(), "seed": seed, "sigma": sigma})
            d = run_dir(cfg, out)
            d.mkdir(parents=True, exist_ok=True)
            (d / "config.ini").write_text(format_config(cfg))
            try:
                rep, art = ex.run_experiment(cfg)
            except ex.StageError as exc:
                log.error("seed %d sigma %g: %s", seed, sigma, exc)
                rows.append([cfg.experiment, seed, sigma] + [""] * 7 + [f"failed:{exc.stage}"])
                failed = True
                continue
            write_outputs(d, cfg, rep, art)
            if art.sparsifier is not None:
                art.sparsifier.save(d)
            rows.append([cfg.experiment, seed, sigma, rep.surrogate_rmse, rep.framework_rmse,
                         "" if rep.rom_rmse is None else rep.rom_rmse, rep.updates,
                         rep.edges_original, rep.edges_kept, rep.k, "ok"])
            log.info("seed %d sigma %g: surrogate %.4g framework %.4g", seed, sigma,
                     rep.surrogate_rmse, rep.framework_rmse)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"table-{base.experiment}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_HEADER)
        w.writerows(rows)
    return EXIT_NUMERIC if failed else EXIT_OK


STAGES = {"simulate": cmd_simulate, "pod": cmd_pod, "sparsify": cmd_sparsify,
          "node-train": cmd_node_train, "cluster": cmd_cluster,
          "train-markov": cmd_train_markov, "filter": cmd_filter}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="romguard", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in list(STAGES) + ["bench"]:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="INI file; omitted keys take preset values")
        p.add_argument("--experiment", choices=ex.EXPERIMENTS)
        p.add_argument("--out", type=Path, default=Path("runs"))
        if name == "bench":
            p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
            p.add_argument("--sigmas", type=float, nargs="+", default=[0.05, 0.1, 0.2])
        else:
            p.add_argument("--seed", type=int)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        text = args.config.read_text() if args.config else ""
        cfg = parse_config(text, {"experiment": args.experiment,
                                  "seed": getattr(args, "seed", None)})
        if args.command == "bench":
            return cmd_bench(cfg, args.out, args.seeds, args.sigmas)
        d = run_dir(cfg, args.out)
        d.mkdir(parents=True, exist_ok=True)
        (d / "config.ini").write_text(format_config(cfg))
        rep = STAGES[args.command](cfg, d)
        if rep is not None:
            print(rep.to_json(), end="")
        print(d)
        return EXIT_OK
    except (ConfigError, GraphError, OSError) as exc:
        print(f"romguard: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ex.StageError as exc:
        if isinstance(exc.cause, NUMERIC_ERRORS):
            print(f"romguard: numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"romguard: {exc}", file=sys.stderr)
        return EXIT_CONFIG if isinstance(exc.cause, (ValueError, KeyError)) else EXIT_NUMERIC
    except NUMERIC_ERRORS as exc:
        print(f"romguard: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
