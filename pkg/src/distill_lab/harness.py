"""Seed sweeps over variants, with deterministic CSV outputs.

Output layout under the output directory:

``manifest.csv``
    run_id, variant, seed_index, config_hash, status, trace_path, wall_time, error
``finals.csv``
    run_id, variant, seed_index, status, x0..x{n-1}
``traces/run_<run_id>.csv``
    run_id, variant, seed_index, step, t, grad_norm, [view,] x0..x{n-1}

Rows are ordered by (variant order in the config, seed index), and floats are
written with ``repr`` so the files are byte-identical for any parallelism.
``manifest.csv`` is the only file that carries wall-clock times.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, parse_config, serialize
from .distill import DivergenceError, optimize_image, optimize_scene
from .ode import PathCache

THREADS_ENV = "DISTILL_LAB_THREADS"


@dataclass
class RunRecord:
    """Outcome of one (variant, seed index) run."""

    run_id: str
    variant: str
    seed_index: int
    config_hash: str
    final: np.ndarray | None
    trace_path: str
    wall_time: float
    status: str = "ok"
    error: str = ""
    trace: np.ndarray | None = None


def effective_parallelism(requested: int) -> int:
    """``requested`` capped by the ``DISTILL_LAB_THREADS`` environment variable."""
    n = max(1, int(requested))
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {cap!r}") from None
    return n


def run_id_for(variant: str, seed_index: int) -> str:
    return f"{variant}-{seed_index}"


class _Worker:
    """Per-process runner: builds oracle and caches once from the config text."""

    def __init__(self, text: str, mode: str):
        self.cfg = parse_config(text)
        self.mode = mode
        self.base_seed = self.cfg.get("sweep", "base_seed")
        if mode == "3d":
            self.scene = self.cfg.scene()
            self.oracle = self.cfg.oracle(self.scene)
        else:
            self.scene = None
            self.oracle = self.cfg.oracle()
            x = np.array(self.cfg.get("distill", "x_init"), dtype=np.float64)
            self.x_init = np.broadcast_to(x, (self.oracle.dim,)).copy()
        self.cache = PathCache(self.oracle, capacity=256)
        self.condition = self.cfg.get("distill", "condition")

    def run(self, variant: str, seed_index: int):
        dc = self.cfg.distill_config(variant)
        start = time.perf_counter()
        try:
            if self.mode == "3d":
                final, trace = optimize_scene(self.oracle, self.scene, dc, seed_index,
                                              self.base_seed, self.cache)
            else:
                final, trace = optimize_image(self.oracle, self.x_init, self.condition, dc,
                                              seed_index, self.base_seed, self.cache)
            return final, trace, time.perf_counter() - start, "ok", ""
        except DivergenceError as exc:
            return None, None, time.perf_counter() - start, "diverged", str(exc)
        except (ValueError, FloatingPointError, KeyError) as exc:
            return None, None, time.perf_counter() - start, "failed", f"{type(exc).__name__}: {exc}"


_WORKER: _Worker | None = None


def _init_worker(text, mode):
    global _WORKER
    _WORKER = _Worker(text, mode)


def _run_job(job):
    return _WORKER.run(*job)


def run_sweep(cfg: ExperimentConfig, mode: str = "2d", out_dir=None, parallel: int | None = None,
              seeds=None) -> list:
    """Run every (variant, seed index) pair and persist the results.

    Args:
        cfg: Parsed experiment config.
        mode: ``"2d"`` optimizes images against the mixtures, ``"3d"`` the scene.
        out_dir: Output directory; ``None`` skips writing files.
        parallel: Worker processes; defaults to ``sweep.parallel``.
        seeds: Optional explicit seed indices overriding ``sweep.seeds``.

    Returns:
        RunRecords ordered by (variant, seed index).
    """
    if mode not in ("2d", "3d"):
        raise ValueError(f"mode must be '2d' or '3d', got {mode!r}")
    text = serialize(cfg)
    chash = cfg.config_hash
    seeds = cfg.seed_indices() if seeds is None else list(seeds)
    jobs = [(v, s) for v in cfg.get("distill", "variants") for s in seeds]
    n_par = effective_parallelism(cfg.get("sweep", "parallel") if parallel is None else parallel)
    if not jobs:
        results = []
    elif n_par == 1 or len(jobs) == 1:
        worker = _Worker(text, mode)
        results = [worker.run(*j) for j in jobs]
    else:
        chunk = max(1, len(jobs) // (4 * n_par))
        with ProcessPoolExecutor(n_par, initializer=_init_worker, initargs=(text, mode)) as pool:
            results = list(pool.map(_run_job, jobs, chunksize=chunk))
    records = []
    for (variant, seed), (final, trace, wall, status, err) in zip(jobs, results):
        rid = run_id_for(variant, seed)
        records.append(RunRecord(rid, variant, seed, chash, final, f"traces/run_{rid}.csv",
                                 wall, status, err, trace))
    if out_dir is not None:
        write_outputs(records, out_dir, mode, cfg.get("output", "traces"))
    return records


def _r(v) -> str:
    return repr(float(v))


def write_outputs(records, out_dir, mode: str = "2d", traces: bool = True):
    """Write traces first, then finals, then the manifest (the commit point)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dim = next((len(r.final) for r in records if r.final is not None), 0)
    if traces:
        (out / "traces").mkdir(exist_ok=True)
        for rec in records:
            if rec.trace is None:
                continue
            _write_trace(out / rec.trace_path, rec, mode)
    _atomic_csv(out / "finals.csv", ["run_id", "variant", "seed_index", "status"]
                + [f"x{i}" for i in range(dim)],
                [[r.run_id, r.variant, r.seed_index, r.status]
                 + ([_r(v) for v in r.final] if r.final is not None else [""] * dim)
                 for r in records])
    _atomic_csv(out / "manifest.csv",
                ["run_id", "variant", "seed_index", "config_hash", "status", "trace_path",
                 "wall_time", "error"],
                [[r.run_id, r.variant, r.seed_index, r.config_hash, r.status,
                  r.trace_path if (traces and r.trace is not None) else "",
                  f"{r.wall_time:.6f}", r.error] for r in records])


def _write_trace(path: Path, rec: RunRecord, mode: str):
    tr = rec.trace
    head = ["run_id", "variant", "seed_index", "step", "t", "grad_norm"]
    lead = 4 if mode == "3d" else 3
    if mode == "3d":
        head.append("view")
    head += [f"x{i}" for i in range(tr.shape[1] - lead)]
    rows = []
    for row in tr:
        vals = [rec.run_id, rec.variant, rec.seed_index, int(row[0]), _r(row[1]), _r(row[2])]
        if mode == "3d":
            vals.append(int(row[3]))
        rows.append(vals + [_r(v) for v in row[lead:]])
    _atomic_csv(path, head, rows)


def _atomic_csv(path: Path, header, rows):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def read_finals(path) -> list:
    """Rows of a finals CSV as dicts with ``final`` parsed to an array (None if failed)."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            xs = [row[k] for k in row if k.startswith("x")]
            final = np.array([float(v) for v in xs]) if row["status"] == "ok" else None
            out.append({"run_id": row["run_id"], "variant": row["variant"],
                        "seed_index": int(row["seed_index"]), "status": row["status"],
                        "final": final})
    return out


def read_trace(path) -> np.ndarray:
    """Numeric columns (step, t, grad_norm, [view,] x...) of a trace CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r[3:]] for r in rows[1:]])
