"""Command-line front end: config ingestion and experiment orchestration.

Subcommands: gen (serialize channel realizations), run (design one
realization and dump matrices plus analytic MSE), sweep (parameter sweep
CSV), curve (learning-curve CSV).  Exit codes: 0 success, 2 configuration
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import montecarlo as mc
from . import serialize
from .channel import (
    ConfigurationError,
    Geometry,
    PowerConfig,
    SystemDims,
    apply_csi_error,
    noise_variance,
)
from .separate_mse import BdInfeasibleError
from .sum_mse import AlgoConfig, DegenerateDesignError, NumericalError, eval_sum_mse

log = logging.getLogger(__name__)

_DESK = {
    "seed": 1,
    "scale": "desk",
    "out_dir": "out",
    "schemes": ["RAO", "UAON", "SEPARATE"],
    "sigma_h2_norm": 1.0,
    "gamma_bs": None,
    "gamma_sc": None,
    "workers": 1,
    "dims": {
        "n_bs": 12, "n_sc": 4, "n_ue": 2, "n_s": 1,
        "k_mue": 4, "s_cells": 2, "l_sue": [2, 2],
    },
    "powers": {
        "p_bs_dbm": 46.0, "p_sc_dbm": 24.0,
        "noise_density_dbm_hz": -174.0, "bandwidth_hz": 20e6,
    },
    "geometry": {
        "mc_radius_m": 800.0, "sc_radius_m": 100.0, "inter_site_m": 700.0,
    },
    "algo": {
        "max_iters": 100, "rel_tol": 1e-6, "bisect_tol": 1e-8, "ridge": 1e-12,
    },
    "sweep": {
        "axis": "p_bs_dbm", "values": [46.0, 51.0, 56.0],
        "n_channels": 20, "n_symbols": 200,
    },
    "curve": {"n_runs": 20, "n_iters": 30},
}

_PAPER_OVERRIDES = {
    "scale": "paper",
    "dims": {
        "n_bs": 36, "n_sc": 8, "n_ue": 2, "n_s": 1,
        "k_mue": 8, "s_cells": 2, "l_sue": [4, 4],
    },
    "sweep": {
        "axis": "p_bs_dbm", "values": [46.0, 48.0, 50.0, 52.0, 54.0, 56.0],
        "n_channels": 1000, "n_symbols": 10000,
    },
    "curve": {"n_runs": 100, "n_iters": 50},
}


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved and validated experiment configuration."""

    seed: int
    scale: str
    out_dir: str
    schemes: tuple[str, ...]
    sigma_h2_norm: float
    gamma_bs: float | None
    gamma_sc: float | None
    workers: int
    dims: SystemDims
    powers: PowerConfig
    geometry: Geometry
    algo: AlgoConfig
    sweep_axis: str
    sweep_values: tuple
    n_channels: int
    n_symbols: int
    curve_runs: int
    curve_iters: int

    def scenario(self) -> mc.ScenarioConfig:
        return mc.ScenarioConfig(
            dims=self.dims, powers=self.powers, geometry=self.geometry,
            algo=self.algo, sigma_h2_norm=self.sigma_h2_norm,
            gamma_bs=self.gamma_bs, gamma_sc=self.gamma_sc,
        )

    def sweep_spec(self) -> mc.SweepSpec:
        return mc.SweepSpec(self.sweep_axis, self.sweep_values, self.schemes,
                            self.n_channels, self.n_symbols, self.seed)

    def resolved_dict(self) -> dict:
        return {
            "seed": self.seed,
            "scale": self.scale,
            "out_dir": self.out_dir,
            "schemes": list(self.schemes),
            "sigma_h2_norm": self.sigma_h2_norm,
            "gamma_bs": self.gamma_bs,
            "gamma_sc": self.gamma_sc,
            "workers": self.workers,
            "dims": {**asdict(self.dims), "l_sue": list(self.dims.l_sue)},
            "powers": asdict(self.powers),
            "geometry": asdict(self.geometry),
            "algo": asdict(self.algo),
            "sweep": {
                "axis": self.sweep_axis,
                "values": list(self.sweep_values),
                "n_channels": self.n_channels,
                "n_symbols": self.n_symbols,
            },
            "curve": {"n_runs": self.curve_runs, "n_iters": self.curve_iters},
        }


def _merge(defaults: dict, user: dict, path: str = "config") -> dict:
    out = dict(defaults)
    for key, val in user.items():
        if key not in defaults:
            raise ConfigurationError(f"{path}: unknown key {key!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(val, dict):
                raise ConfigurationError(f"{path}.{key}: expected an object")
            out[key] = _merge(defaults[key], val, f"{path}.{key}")
        else:
            out[key] = val
    return out


def _build_config(raw: dict) -> RunConfig:
    base = dict(_DESK)
    if raw.get("scale", "desk") == "paper":
        base = _merge(_DESK, _PAPER_OVERRIDES)
    merged = _merge(base, raw)
    for scheme in merged["schemes"]:
        if scheme not in mc.SCHEMES:
            raise ConfigurationError(
                f"config.schemes: unknown scheme {scheme!r}; "
                f"valid: {', '.join(mc.SCHEMES)}")
    if merged["sigma_h2_norm"] < 0:
        raise ConfigurationError("config.sigma_h2_norm must be >= 0")
    if merged["workers"] < 1:
        raise ConfigurationError("config.workers must be >= 1")
    try:
        dims = SystemDims(**merged["dims"])
        powers = PowerConfig(**merged["powers"])
        geometry = Geometry(**merged["geometry"])
        algo = AlgoConfig(**merged["algo"])
        sweep = merged["sweep"]
        if sweep["axis"] not in mc.SWEEP_AXES:
            raise ConfigurationError(
                f"config.sweep.axis must be one of {', '.join(mc.SWEEP_AXES)}")
        if not sweep["values"]:
            raise ConfigurationError("config.sweep.values is empty")
        if sweep["n_channels"] < 1 or sweep["n_symbols"] < 1:
            raise ConfigurationError("config.sweep counts must be >= 1")
        if merged["curve"]["n_runs"] < 1 or merged["curve"]["n_iters"] < 1:
            raise ConfigurationError("config.curve counts must be >= 1")
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc
    return RunConfig(
        seed=int(merged["seed"]),
        scale=merged["scale"],
        out_dir=merged["out_dir"],
        schemes=tuple(merged["schemes"]),
        sigma_h2_norm=float(merged["sigma_h2_norm"]),
        gamma_bs=merged["gamma_bs"],
        gamma_sc=merged["gamma_sc"],
        workers=int(merged["workers"]),
        dims=dims,
        powers=powers,
        geometry=geometry,
        algo=algo,
        sweep_axis=sweep["axis"],
        sweep_values=tuple(sweep["values"]),
        n_channels=int(sweep["n_channels"]),
        n_symbols=int(sweep["n_symbols"]),
        curve_runs=int(merged["curve"]["n_runs"]),
        curve_iters=int(merged["curve"]["n_iters"]),
    )


def parse_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Load, merge with defaults, and validate a JSON config file."""
    raw: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigurationError(
                f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}")
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: top level must be an object")
    for key, val in (overrides or {}).items():
        if val is not None:
            raw[key] = val
    return _build_config(raw)


def write_resolved(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    text = json.dumps(cfg.resolved_dict(), indent=2, sort_keys=True) + "\n"
    (out / "resolved_config.json").write_text(text)


def cmd_gen(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    write_resolved(cfg, out)
    scen = cfg.scenario()
    for i in range(cfg.n_channels):
        seeds = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(i,)).spawn(1)
        ch = mc.realize_gains(scen, seeds[0])
        serialize.save_channel_set(out / f"channels_{i:04d}.npz", ch)
    log.info("wrote %d channel realizations to %s", cfg.n_channels, out)
    return 0


def cmd_run(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    write_resolved(cfg, out)
    scen = cfg.scenario()
    ch_seed, csi_seed, init_seed, _, _ = mc._child_seeds(cfg.seed, 0)
    ch = mc.realize_gains(scen, ch_seed)
    serialize.save_channel_set(out / "channels_0000.npz", ch)
    sigma0_sq = noise_variance(cfg.powers)
    csi = None
    if any(s.startswith("ROBUST") for s in cfg.schemes):
        csi = apply_csi_error(ch, cfg.sigma_h2_norm * sigma0_sq, csi_seed,
                              sigma0_sq)
    lines = ["scheme,user_class,mse_per_stream"]
    for scheme in cfg.schemes:
        w, r, _ = mc.design_for_scheme(scheme, ch, csi, scen, sigma0_sq,
                                       init_seed)
        serialize.save_design(out / f"design_{scheme}.npz", w, r)
        br = eval_sum_mse(ch.g, w, r, sigma0_sq)
        means = mc._class_means(br, cfg.dims.n_s)
        for cls in ("MUE", "SUE", "ALL"):
            lines.append(f"{scheme},{cls},{means[cls.lower()]!r}")
    (out / "mse.csv").write_text("\n".join(lines) + "\n")
    log.info("wrote designs and mse.csv to %s", out)
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    write_resolved(cfg, out)
    report = mc.run_sweep(cfg.sweep_spec(), cfg.scenario(), workers=cfg.workers)
    (out / "sweep.csv").write_text(report.to_csv())
    log.info("wrote sweep.csv (%d rows) to %s", len(report.rows), out)
    return 0


def cmd_curve(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    write_resolved(cfg, out)
    scen = cfg.scenario()
    ch_seed, csi_seed, _, _, _ = mc._child_seeds(cfg.seed, 0)
    ch = mc.realize_gains(scen, ch_seed)
    sigma0_sq = noise_variance(cfg.powers)
    csi = None
    if any(s.startswith("ROBUST") for s in cfg.schemes):
        csi = apply_csi_error(ch, cfg.sigma_h2_norm * sigma0_sq, csi_seed,
                              sigma0_sq)
    rows = mc.learning_curve(ch, cfg.schemes, cfg.curve_runs, cfg.curve_iters,
                             sigma0_sq, cfg.seed, csi=csi, algo=cfg.algo,
                             gamma_bs=cfg.gamma_bs, gamma_sc=cfg.gamma_sc)
    (out / "curve.csv").write_text(mc.curve_csv(rows))
    log.info("wrote curve.csv to %s", out)
    return 0


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hetmimo",
        description="MSE-based precoding designer and simulator for "
                    "two-tier MIMO downlinks")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("gen", "generate and serialize channel realizations"),
        ("run", "design precoders for one realization"),
        ("sweep", "run a parameter sweep and write CSV"),
        ("curve", "average learning curves over random initializations"),
    ):
        q = sub.add_parser(name, help=help_text)
        q.add_argument("--config", type=str, default=None,
                       help="JSON config file")
        q.add_argument("--seed", type=int, default=None, help="master seed")
        q.add_argument("--workers", type=int, default=None,
                       help="parallel workers (never affects results)")
        q.add_argument("--out", type=str, default=None, help="output directory")
        q.add_argument("--scale", choices=("desk", "paper"), default=None,
                       help="default parameter preset")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = _parser().parse_args(argv)
    try:
        cfg = parse_config(args.config, overrides={
            "seed": args.seed,
            "workers": args.workers,
            "out_dir": args.out,
            "scale": args.scale,
        })
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    handler = {"gen": cmd_gen, "run": cmd_run, "sweep": cmd_sweep,
               "curve": cmd_curve}[args.command]
    try:
        return handler(cfg)
    except (NumericalError, DegenerateDesignError, BdInfeasibleError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
