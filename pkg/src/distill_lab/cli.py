"""Command line entry point: ``distill-lab <command> --config <path> ...``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import rng as rng_mod
from .config import ConfigError, ExperimentConfig, load_config
from .distill import ddim_reference
from .harness import THREADS_ENV, read_finals, read_trace, run_sweep
from .metrics import fidelity_nll, mode_coverage, pairwise_diversity, wasserstein2
from .ode import PathCache, ddim_forward, ddim_invert
from .plots import emit_plot
from .schedule import TimeGrid

log = logging.getLogger("distill_lab")

COMMANDS = ("sample", "invert", "distill2d", "distill3d", "compare", "plot")


def _seed_range(text: str):
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            return int(a), int(b)
        i = int(text)
        return i, i
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a..b, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="distill-lab", description=__doc__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="experiment config file")
    p.add_argument("--seed-range", type=_seed_range, help="inclusive seed indices a..b")
    p.add_argument("--out", help="output directory (default: output.dir from the config)")
    p.add_argument("--parallel", type=int, help=f"worker processes (capped by ${THREADS_ENV})")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed_range is not None:
        cfg = cfg.with_value("sweep", "seeds", tuple(args.seed_range))
    if args.parallel is not None:
        if args.parallel < 1:
            raise ConfigError(["--parallel must be >= 1"])
        cfg = cfg.with_value("sweep", "parallel", args.parallel)
    return cfg


def _write_rows(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_sample(cfg: ExperimentConfig, out: Path) -> int:
    oracle = cfg.oracle()
    d = cfg.sections["distill"]
    grid = TimeGrid.ddim(d["n_ddim"], oracle.schedule.T)
    rows, finals = [], []
    xcols = [f"x{i}" for i in range(oracle.dim)]
    for s in cfg.seed_indices():
        seed = rng_mod.prior_seed(cfg.get("sweep", "base_seed"), s, oracle.dim)
        path = ddim_forward(oracle, seed, d["condition"], 0.0, grid, d["cfg_path"])
        for st in path.states():
            rows.append([s, repr(st.t)] + [repr(float(v)) for v in st.x])
        finals.append([s] + [repr(float(v)) for v in path.sample()])
    _write_rows(out / "paths.csv", ["seed_index", "t"] + xcols, rows)
    _write_rows(out / "ddim_samples.csv", ["seed_index"] + xcols, finals)
    log.info("wrote %d path rows to %s", len(rows), out)
    return 0


def _invert_inputs(cfg: ExperimentConfig, oracle):
    src = cfg.get("invert", "input")
    if src == "means":
        return oracle.mixture(cfg.get("distill", "condition")).means
    with open(src, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    cols = [k for k in (rows[0] if rows else {}) if k.startswith("x")]
    return np.array([[float(r[c]) for c in cols] for r in rows if r.get("status", "ok") == "ok"])


def cmd_invert(cfg: ExperimentConfig, out: Path) -> int:
    oracle = cfg.oracle()
    inv = cfg.sections["invert"]
    grid = TimeGrid.ddim(inv["n_ddim"], oracle.schedule.T)
    cond = cfg.get("distill", "condition")
    rows = []
    for i, x0 in enumerate(_invert_inputs(cfg, oracle)):
        path = ddim_invert(oracle, x0, cond, oracle.schedule.T, grid, inv["guidance"])
        rows.append([i, repr(path.final_state.t)] + [repr(float(v)) for v in path.final_state.x])
    _write_rows(out / "inversions.csv", ["point_index", "t"] + [f"x{j}" for j in range(oracle.dim)], rows)
    return 0


def cmd_distill(cfg: ExperimentConfig, out: Path, mode: str) -> int:
    records = run_sweep(cfg, mode, out)
    if mode == "3d":
        scene = cfg.scene()
        _write_rows(out / "objects.csv", ["object_index", "weight"] + [f"x{i}" for i in range(scene.D)],
                    [[k, repr(float(w))] + [repr(float(v)) for v in obj]
                     for k, (obj, w) in enumerate(zip(scene.library.objects, scene.library.weights))])
    failed = [r for r in records if r.status != "ok"]
    for r in failed:
        log.warning("run %s %s: %s", r.run_id, r.status, r.error)
    log.info("%d runs, %d failed; outputs in %s", len(records), len(failed), out)
    return 1 if failed else 0


def cmd_compare(cfg: ExperimentConfig, out: Path) -> int:
    finals = read_finals(out / "finals.csv")
    is_3d = (out / "objects.csv").exists()
    base_seed = cfg.get("sweep", "base_seed")
    tau = cfg.get("compare", "tau")
    if is_3d:
        scene = cfg.scene()
        oracle = cfg.oracle(scene)
        modes = scene.library.objects
        tau = 10.0 * scene.library.scale if tau is None else tau
    else:
        oracle = cfg.oracle()
        cond = cfg.get("distill", "condition")
        mix = oracle.mixture(cond)
        modes = mix.means
        tau = 2.0 * float(mix.scales.min()) if tau is None else tau
    cache = PathCache(oracle, capacity=256)
    rows = []
    groups = {}
    for r in finals:
        groups.setdefault(r["variant"], []).append(r)
    for variant, rs in groups.items():
        ok = [r for r in rs if r["final"] is not None]
        xs = np.array([r["final"] for r in ok])
        div = pairwise_diversity(xs) if len(xs) >= 2 else float("nan")
        cov = mode_coverage(xs, modes, tau) if len(xs) else 0
        if not len(xs):
            nll = w2 = float("nan")
        elif is_3d:
            nll = float(np.mean([fidelity_nll(v.render(xs), oracle, v.condition) for v in scene.views]))
            w2 = float("nan")
        else:
            nll = fidelity_nll(xs, oracle, cond)
            w2 = float("nan")
            if cfg.get("compare", "reference") == "ddim" and len(xs) <= 256:
                dc = cfg.distill_config(variant)
                ref = np.array([ddim_reference(oracle, cond, dc, r["seed_index"], base_seed, cache)
                                for r in ok])
                w2 = wasserstein2(xs, ref)
        rows.append([variant, len(rs), len(ok), repr(div), cov, repr(nll), repr(w2)])
    _write_rows(out / "metrics.csv", ["variant", "runs", "ok", "diversity", "coverage", "nll", "w2"], rows)
    if cfg.get("output", "plots") and not is_3d:
        plots = out / "plots"
        plots.mkdir(exist_ok=True)
        (plots / "scatter.svg").write_text(emit_plot(finals, "scatter"), encoding="utf-8")
    return 0


def cmd_plot(cfg: ExperimentConfig, out: Path) -> int:
    finals = read_finals(out / "finals.csv")
    plots = out / "plots"
    plots.mkdir(parents=True, exist_ok=True)
    dim = next((len(r["final"]) for r in finals if r["final"] is not None), 0)
    if dim > 2:
        log.warning("samples have dimension %d; only 1D/2D plots are supported", dim)
        return 0
    (plots / "scatter.svg").write_text(emit_plot(finals, "scatter"), encoding="utf-8")
    recs = []
    for r in finals:
        tp = out / "traces" / f"run_{r['run_id']}.csv"
        if tp.exists():
            recs.append(dict(r, trace=read_trace(tp)))
    (plots / "trajectory.svg").write_text(emit_plot(recs, "trajectory"), encoding="utf-8")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        out = Path(args.out or cfg.get("output", "dir"))
        if args.command == "sample":
            return cmd_sample(cfg, out)
        if args.command == "invert":
            return cmd_invert(cfg, out)
        if args.command == "distill2d":
            return cmd_distill(cfg, out, "2d")
        if args.command == "distill3d":
            return cmd_distill(cfg, out, "3d")
        if args.command == "compare":
            return cmd_compare(cfg, out)
        return cmd_plot(cfg, out)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
