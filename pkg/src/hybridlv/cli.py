"""Command-line front end.

Commands
--------
solve-pde         march the density and export snapshots + mass diagnostics
price-pde         strike sweep of call prices from the evolved density
price-analytic    closed-form prices and sensitivities (constant vol only)
price-mc          Monte Carlo prices with standard errors
corrective-terms  stochastic-rates adjustments over a maturity grid
calibrate         bootstrap a local-vol surface from a call surface
compare           join two price CSVs and report the discrepancy

Every CSV artifact starts with a ``# config=<hash>`` comment carrying the
digest of the resolved configuration; rerunning a command with the same
config and seed reproduces the bytes exactly.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import calibration as cal
from . import montecarlo as mc
from . import pde
from .analytic import bshw_call
from .config import ExperimentConfig, load_config
from .errors import ConfigError, HybridLvError
from .models import forward_rate
from .version import __version__

__all__ = ["main", "run"]


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


class _Writer:
    def __init__(self, out_dir: Path, digest: str):
        self.out_dir = out_dir
        self.digest = digest
        self.written: list[Path] = []

    def csv(self, name: str, header: str, rows, comments=()) -> Path:
        path = self.out_dir / name
        with open(path, "w") as handle:
            handle.write(f"# config={self.digest}\n")
            for line in comments:
                handle.write(f"# {line}\n")
            handle.write(header + "\n")
            for row in rows:
                handle.write(",".join(_fmt(x) for x in row) + "\n")
        self.written.append(path)
        return path

    def text(self, name: str, content: str) -> Path:
        path = self.out_dir / name
        path.write_text(content)
        self.written.append(path)
        return path


def _kernel_arg(cfg: ExperimentConfig):
    kernel = cfg.grid_block["kernel"]
    if kernel == "auto" or kernel is None:
        return None
    return float(kernel)


def _build_grid(cfg: ExperimentConfig, model, t_end: float) -> pde.Grid2D:
    gb = cfg.grid_block
    if gb["bounds"] == "auto":
        return pde.auto_grid(
            model,
            t_end,
            ds=float(gb["ds"]),
            dr=float(gb["dr"]),
            dt=float(gb["dt"]),
            s_max_sigmas=float(gb["s_max_sigmas"]),
            r_sigmas=float(gb["r_sigmas"]),
        )
    b = gb["bounds"]
    n_s = max(8, int(round((float(b["s_max"]) - float(b["s_min"])) / float(gb["ds"]))) - 1)
    n_r = max(8, int(round((float(b["r_max"]) - float(b["r_min"])) / float(gb["dr"]))) - 1)
    n_t = max(1, int(round(t_end / float(gb["dt"]))))
    return pde.Grid2D(
        float(b["s_min"]), float(b["s_max"]), float(b["r_min"]), float(b["r_max"]),
        n_s, n_r, t_end, n_t,
    )


def _snap_times(cfg: ExperimentConfig, grid: pde.Grid2D) -> list[float]:
    # Snapshot times must sit on the step lattice; snap to the nearest step
    # and surface any real shift.
    out = []
    for t in cfg.maturities():
        n = min(max(int(round(t / grid.dt)), 1), grid.n_t)
        snapped = n * grid.dt
        if abs(snapped - t) > 1e-9 * max(1.0, grid.t_end):
            print(f"note: maturity {t:g} snapped to {snapped:.6g} on the step lattice",
                  file=sys.stderr)
        out.append(snapped)
    return out


def _evolve(cfg: ExperimentConfig, model, t_end: float, snapshot_times):
    grid = _build_grid(cfg, model, t_end)
    return grid, pde.evolve(model, grid, kernel_n=_kernel_arg(cfg), snapshot_times=snapshot_times)


def _mass_rows(diag: pde.EvolveDiagnostics):
    ratios = diag.mass_ratios
    for i, t in enumerate(diag.times):
        yield (
            i + 1, t, diag.raw_mass[i], diag.target_mass[i], ratios[i],
            diag.negative_fraction[i], diag.negative_mass_ratio[i],
        )


def _cmd_solve_pde(cfg, writer: _Writer):
    model = cfg.build_model()
    times = cfg.maturities()
    grid = _build_grid(cfg, model, max(times))
    times = _snap_times(cfg, grid)
    result = pde.evolve(model, grid, kernel_n=_kernel_arg(cfg), snapshot_times=times)
    for snap in result.snapshots:
        path = writer.out_dir / f"pz_t{snap.t:.6g}.csv"
        with open(path, "w") as handle:
            handle.write(f"# config={writer.digest}\n")
            snap.write_csv(handle)
        writer.written.append(path)
    writer.csv(
        "mass_diagnostics.csv",
        "step,t,raw_mass,target_zc,ratio,neg_fraction,neg_mass_ratio",
        _mass_rows(result.diagnostics),
        comments=[f"start_mode={result.diagnostics.start_mode}",
                  f"start_time={result.diagnostics.start_time:.17g}"],
    )
    for warning in result.diagnostics.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return 0


def _cmd_price_pde(cfg, writer: _Writer):
    model = cfg.build_model()
    maturity = float(cfg.maturities()[-1])
    grid = _build_grid(cfg, model, maturity)
    t_snap = _snap_times(cfg, grid)[-1]
    result = pde.evolve(model, grid, kernel_n=_kernel_arg(cfg), snapshot_times=[t_snap])
    strikes = cfg.strikes()
    prices = cal.price_calls_from_pz(result.at(t_snap), strikes)
    writer.csv("prices_pde.csv", "K,price", zip(strikes, prices),
               comments=[f"T={maturity:.17g}"])
    return 0


def _cmd_price_analytic(cfg, writer: _Writer):
    model = cfg.build_model()
    maturity = float(cfg.maturities()[-1])
    rows = []
    for k in cfg.strikes():
        pg = bshw_call(model, maturity, float(k))
        rows.append((k, pg.price, pg.c_t, pg.c_k, pg.c_kk))
    writer.csv("prices_analytic.csv", "K,price,c_t,c_k,c_kk", rows,
               comments=[f"T={maturity:.17g}"])
    return 0


def _cmd_price_mc(cfg, writer: _Writer):
    model = cfg.build_model()
    maturity = float(cfg.maturities()[-1])
    mb = cfg.run_block["mc"]
    config = mc.McConfig(
        n_paths=int(mb["n_paths"]),
        dt_mc=float(mb["dt"]),
        seed=int(mb["seed"]),
        antithetic=bool(mb["antithetic"]),
    )
    strikes = cfg.strikes()
    payoffs = [
        (lambda s, r, acc, k=float(k): np.exp(-acc) * np.maximum(s - k, 0.0))
        for k in strikes
    ]
    estimates = mc.simulate_paths(model, maturity, config, payoffs)
    rows = [(k, e.mean, e.standard_error) for k, e in zip(strikes, estimates)]
    writer.csv("prices_mc.csv", "K,price,se", rows, comments=[f"T={maturity:.17g}"])
    return 0


def _cmd_corrective_terms(cfg, writer: _Writer):
    model = cfg.build_model()
    times = cfg.maturities()
    grid = _build_grid(cfg, model, max(times))
    times = _snap_times(cfg, grid)
    result = pde.evolve(model, grid, kernel_n=_kernel_arg(cfg), snapshot_times=times)
    strikes = cfg.strikes()
    rows = []
    for snap in result.snapshots:
        curve = cal.corrective_terms(snap, forward_rate(model.rate, snap.t), strikes)
        rows.extend((snap.t, k, a) for k, a in zip(curve.strikes, curve.adj))
    writer.csv("corrective_terms.csv", "T,K,adj", rows)
    return 0


def _cmd_calibrate(cfg, writer: _Writer):
    model = cfg.build_model()
    cb = cfg.run_block["calibration"]
    strikes = cfg.strikes()
    maturities = cfg.maturities()
    if cb["market"] == "analytic":
        market = cal.make_analytic_surface(model, maturities, strikes)
    elif cb["market"] == "csv":
        market = _read_market(cb["market_path"])
    else:
        raise ConfigError(f"unknown market source {cb['market']!r}")
    settings = cal.CalibrationSettings(
        ds=float(cb["ds"]),
        dr=float(cb["dr"]),
        dt=float(cb["dt"]),
        mode=str(cb["mode"]),
        slice_iterations=int(cb["slice_iterations"]),
        use_corrective=bool(cb["use_corrective"]),
    )
    result = cal.calibrate(market, model, settings)
    surface = result.surface
    rows = [
        (t, k, surface.sigma[i, j])
        for i, t in enumerate(surface.maturities)
        for j, k in enumerate(surface.strikes)
    ]
    writer.csv("local_vol_surface.csv", "T,K,sigma", rows)
    writer.text("calibration_report.txt", result.report.format_text())
    return 0


def _read_market(path) -> cal.CallSurface:
    if not path:
        raise ConfigError("market=csv needs run.calibration.market_path")
    rows = []
    with open(path) as handle:
        for line in handle:
            line = line.strip()
            if not line or line.startswith("#") or line.lower().startswith("t,"):
                continue
            t, k, price = (float(x) for x in line.split(","))
            rows.append((t, k, price))
    mats = sorted({r[0] for r in rows})
    ks = sorted({r[1] for r in rows})
    prices = np.full((len(mats), len(ks)), np.nan)
    index = {(t, k): p for t, k, p in rows}
    for i, t in enumerate(mats):
        for j, k in enumerate(ks):
            prices[i, j] = index.get((t, k), np.nan)
    if np.any(np.isnan(prices)):
        raise ConfigError("market CSV is not a full (T, K) lattice")
    return cal.CallSurface(np.asarray(mats), np.asarray(ks), prices, provider="external")


def _read_price_csv(path):
    ks, prices = [], []
    with open(path) as handle:
        for line in handle:
            line = line.strip()
            if not line or line.startswith("#") or line[0].isalpha():
                continue
            parts = line.split(",")
            ks.append(float(parts[0]))
            prices.append(float(parts[1]))
    return np.asarray(ks), np.asarray(prices)


def _cmd_compare(left: str, right: str, writer: _Writer):
    k_l, p_l = _read_price_csv(left)
    k_r, p_r = _read_price_csv(right)
    key_l = np.round(k_l, 9)
    key_r = np.round(k_r, 9)
    common, idx_l, idx_r = np.intersect1d(key_l, key_r, return_indices=True)
    if common.size == 0:
        raise ConfigError("no common strikes to compare")
    diff = p_l[idx_l] - p_r[idx_r]
    rows = zip(common, p_l[idx_l], p_r[idx_r], diff)
    max_abs = float(np.max(np.abs(diff)))
    mean_abs = float(np.mean(np.abs(diff)))
    writer.csv(
        "discrepancy.csv",
        "K,left,right,diff",
        rows,
        comments=[f"left={left}", f"right={right}",
                  f"max_abs_diff={max_abs:.17g}", f"mean_abs_diff={mean_abs:.17g}"],
    )
    print(f"max_abs_diff={max_abs:.6e} mean_abs_diff={mean_abs:.6e}")
    return 0


_COMMANDS = {
    "solve-pde": _cmd_solve_pde,
    "price-pde": _cmd_price_pde,
    "price-analytic": _cmd_price_analytic,
    "price-mc": _cmd_price_mc,
    "corrective-terms": _cmd_corrective_terms,
    "calibrate": _cmd_calibrate,
}


def run(
    command: str,
    config_path: str | None = None,
    out_dir: str | None = None,
    seed: int | None = None,
    threads: int | None = None,
    left: str | None = None,
    right: str | None = None,
) -> int:
    """Execute one command; returns the process exit status."""
    if command == "compare":
        cfg = load_config(config_path) if config_path else ExperimentConfig(raw={"compare": True})
        out = Path(out_dir or ".")
        out.mkdir(parents=True, exist_ok=True)
        if not (left and right):
            raise ConfigError("compare needs --left and --right price CSVs")
        digest = cfg.digest() if config_path else "none"
        return _cmd_compare(left, right, _Writer(out, digest))
    if command not in _COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    if config_path is None:
        raise ConfigError(f"{command} needs --config")
    cfg = load_config(config_path)
    if seed is not None:
        cfg.raw["run"]["mc"]["seed"] = int(seed)
    if threads is not None:
        cfg.raw["run"]["threads"] = int(threads)
    if out_dir is not None:
        cfg.raw["run"]["out_dir"] = str(out_dir)
    out = Path(cfg.run_block["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    resolved = cfg.to_yaml()
    # Echo the fully resolved configuration before doing any work.
    print(f"# resolved config (digest {cfg.digest()})")
    print(resolved, end="")
    (out / "resolved_config.yaml").write_text(resolved)
    writer = _Writer(out, cfg.digest())
    status = _COMMANDS[command](cfg, writer)
    for path in writer.written:
        print(f"wrote {path}")
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hybridlv",
        description="Hybrid local-vol / short-rate pricing and calibration engine",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(_COMMANDS) + ["compare"]:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None)
        p.add_argument("--out", type=str, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        if name == "compare":
            p.add_argument("--left", type=str, required=True)
            p.add_argument("--right", type=str, required=True)
    args = parser.parse_args(argv)
    try:
        return run(
            args.command,
            config_path=args.config,
            out_dir=args.out,
            seed=args.seed,
            threads=args.threads,
            left=getattr(args, "left", None),
            right=getattr(args, "right", None),
        )
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return 2
    except HybridLvError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 3
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
