"""Seed, evolve, report and resume for one run directory.

Layout of a run directory::

    config.json                 resolved configuration
    seeds/seeds.npz             seed density fields (filtered, physical)
    seeds/seed_NNN.pgm|.txt     seed images with sidecar headers
    seeds/seed_NNN_history.csv  low-fidelity convergence history
    seeds/summary.csv
    checkpoint.npz              population, hypervolume history, last VAE
    vae_loss.csv                per-iteration, per-epoch training loss
    report/...                  written by ``cmd_report``
"""

from __future__ import annotations

import hashlib
import io as _io
import json
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .config import RunConfig
from .geometry import StructuredGrid, build_lbracket
from .hifi import HiFiConfig, HighFiResult, evaluate_hifi, write_vtk
from .lowfi import LowFiProblem, LowFiResult, seed_plan, seed_population
from .nsga import hypervolume_2d, non_dominated_sort, ranks_from_fronts, select_elites
from .vae import PARAM_NAMES, TrainingDiverged, VaeParams, crossover_rng, latent_crossover, train

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
CHECKPOINT_NAME = "checkpoint.npz"
HV_HEADER = ("iteration", "hypervolume", "front1_size",
             "sigma_max_min", "sigma_max_max", "volume_fraction_min", "volume_fraction_max")
PARETO_HEADER = ("id", "sigma_max", "volume_fraction", "rank")


class CheckpointError(RuntimeError):
    pass


@dataclass
class Population:
    ids: np.ndarray
    fields: np.ndarray
    objectives: np.ndarray
    valid: np.ndarray
    reasons: list

    def __len__(self):
        return len(self.ids)

    @classmethod
    def empty(cls, n_cells: int):
        return cls(np.zeros(0, dtype=np.int64), np.zeros((0, n_cells)), np.zeros((0, 2)),
                   np.zeros(0, dtype=bool), [])

    def take(self, idx) -> "Population":
        idx = np.asarray(idx, dtype=int)
        return Population(self.ids[idx], self.fields[idx], self.objectives[idx], self.valid[idx],
                          [self.reasons[i] for i in idx])

    def concat(self, other: "Population") -> "Population":
        return Population(
            np.concatenate([self.ids, other.ids]), np.concatenate([self.fields, other.fields]),
            np.concatenate([self.objectives, other.objectives]),
            np.concatenate([self.valid, other.valid]), self.reasons + other.reasons,
        )


@dataclass
class RunState:
    config: RunConfig
    iteration: int
    population: Population
    next_id: int
    hv_ref: np.ndarray
    hv_history: list  # rows matching HV_HEADER
    vae: VaeParams | None = None
    vae_loss: list = field(default_factory=list)  # (iteration, epoch, loss)

    @property
    def finished(self) -> bool:
        return self.iteration >= self.config.evolve.max_iterations


# ----------------------------------------------------------------------------
# helpers


def make_grid(config: RunConfig) -> StructuredGrid:
    return build_lbracket(config.geometry, config.element_size)


def check_field(rho, grid: StructuredGrid, where: str = "field"):
    """Density-field invariants: right length, finite, in [0, 1], solid non-design strip."""
    rho = np.asarray(rho, dtype=float)
    if rho.shape[-1] != grid.n_elements:
        raise ValueError(f"{where}: expected {grid.n_elements} cells, got {rho.shape[-1]}")
    if not np.all(np.isfinite(rho)) or rho.min(initial=0.0) < 0 or rho.max(initial=0.0) > 1:
        raise ValueError(f"{where}: densities must be finite and in [0, 1]")
    if np.any(rho[..., ~grid.design] != 1.0):
        raise ValueError(f"{where}: non-design cells must be solid")
    return rho


def _eval_job(args):
    rho, grid, cfg = args
    return evaluate_hifi(rho, grid, cfg)


def evaluate_fields(fields, grid: StructuredGrid, cfg: HiFiConfig, threads: int = 1):
    jobs = [(f, grid, cfg) for f in fields]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_eval_job, jobs))
    return [_eval_job(j) for j in jobs]


def _population_from(ids, fields, results) -> Population:
    objs = np.array([r.objectives for r in results], dtype=float).reshape(-1, 2)
    return Population(
        ids=np.asarray(ids, dtype=np.int64), fields=np.asarray(fields, dtype=float),
        objectives=objs, valid=np.array([r.valid for r in results], dtype=bool),
        reasons=[r.reason or "" for r in results],
    )


def hv_row(iteration: int, pop: Population, ranks, ref) -> tuple:
    front = pop.objectives[(np.asarray(ranks) == 0) & pop.valid]
    hv = hypervolume_2d(front, ref) if len(front) else 0.0
    if len(front):
        return (iteration, hv, len(front), front[:, 0].min(), front[:, 0].max(),
                front[:, 1].min(), front[:, 1].max())
    return (iteration, hv, 0, np.nan, np.nan, np.nan, np.nan)


def _select(pop: Population, capacity: int):
    """Elitist truncation; the survivors are returned in ascending id order."""
    if len(pop) == 0:
        return pop, np.zeros(0, dtype=int)
    arch = select_elites(pop.objectives, capacity, ids=pop.ids)
    order = np.argsort(arch.ids, kind="stable")
    chosen = arch.indices[order]
    survivors = pop.take(chosen)
    ranks = ranks_from_fronts(non_dominated_sort(survivors.objectives), len(survivors))
    return survivors, ranks


# ----------------------------------------------------------------------------
# seeding


def cmd_seed(config: RunConfig, out=None) -> list:
    """Run the low-fidelity sweep and write the seed population."""
    out = Path(out or config.output)
    grid = make_grid(config)
    problem = LowFiProblem(grid, config.material, config.sweep.filter_radius, force=config.force)
    base = config.sweep.lowfi(config.material, config.force)
    plan = {k: (frac, start) for k, frac, start in
            seed_plan(config.sweep.volume_fractions, config.sweep.n_seeds, config.seed)}
    survivors = seed_population(problem, config.sweep.volume_fractions, config.sweep.n_seeds, base,
                                master_seed=config.seed, workers=config.threads)
    seeds_dir = out / "seeds"
    seeds_dir.mkdir(parents=True, exist_ok=True)
    io.atomic_write_bytes(out / "config.json", config.to_json().encode())
    summary = []
    for k, res in survivors:
        stem = seeds_dir / f"seed_{k:03d}"
        io.write_pgm(stem.with_suffix(".pgm"), grid, res.rho_filtered)
        io.write_csv(f"{stem}_history.csv", LowFiResult.HISTORY_HEADER,
                     [(int(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4])) for r in res.history])
        frac, start = plan[k]
        summary.append((k, float(frac), float(start), float(res.max_relaxed_vm), float(res.volume_fraction)))
    io.write_csv(seeds_dir / "summary.csv",
                 ("seed", "volume_bound", "start_density", "max_relaxed_vm", "volume_fraction"), summary)
    buf = _io.BytesIO()
    np.savez(buf, ids=np.array([k for k, _ in survivors], dtype=np.int64),
             fields=np.array([r.rho_filtered for _, r in survivors]).reshape(len(survivors), grid.n_elements),
             fractions=np.array([plan[k][0] for k, _ in survivors]))
    io.atomic_write_bytes(seeds_dir / "seeds.npz", buf.getvalue())
    log.info("wrote %d seeds to %s", len(survivors), seeds_dir)
    return survivors


def load_seeds(out, grid: StructuredGrid):
    path = Path(out) / "seeds" / "seeds.npz"
    if not path.exists():
        raise FileNotFoundError(f"no seed population at {path}; run 'seed' first")
    with np.load(path) as data:
        ids, fields = data["ids"], data["fields"]
    check_field(fields, grid, str(path))
    return ids, fields


# ----------------------------------------------------------------------------
# checkpoints


def _digest(arrays: dict) -> str:
    h = hashlib.sha256()
    for key in sorted(arrays):
        a = np.ascontiguousarray(arrays[key])
        h.update(key.encode())
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def _state_arrays(state: RunState) -> dict:
    pop = state.population
    arrays = {
        "version": np.array(CHECKPOINT_VERSION),
        "config": np.array(state.config.to_json()),
        "iteration": np.array(state.iteration),
        "next_id": np.array(state.next_id),
        "ids": pop.ids,
        "fields": pop.fields,
        "objectives": pop.objectives,
        "valid": pop.valid,
        "reasons": np.array(pop.reasons, dtype=str).reshape(len(pop)),
        "hv_ref": np.asarray(state.hv_ref, dtype=float),
        "hv_history": np.array(state.hv_history, dtype=float).reshape(-1, len(HV_HEADER)),
        "vae_loss": np.array(state.vae_loss, dtype=float).reshape(-1, 3),
        "has_vae": np.array(state.vae is not None),
    }
    if state.vae is not None:
        for k, v in state.vae.arrays().items():
            arrays["vae_" + k] = v
    return arrays


def save_checkpoint(state: RunState, path):
    arrays = _state_arrays(state)
    arrays["digest"] = np.array(_digest(arrays))
    buf = _io.BytesIO()
    np.savez(buf, **arrays)
    try:
        io.atomic_write_bytes(path, buf.getvalue())
    except OSError as exc:
        fd, dump = tempfile.mkstemp(prefix="mftd-state-", suffix=".npz")
        with os.fdopen(fd, "wb") as fh:
            fh.write(buf.getvalue())
        raise CheckpointError(f"could not write checkpoint {path} ({exc}); state dumped to {dump}") from exc


def load_checkpoint(path) -> RunState:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
    except Exception as exc:  # zip/npy decoding errors come in many types
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    if "version" not in arrays or int(arrays["version"]) != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version mismatch (expected {CHECKPOINT_VERSION})")
    digest = str(arrays.pop("digest", ""))
    if digest != _digest(arrays):
        raise CheckpointError(f"{path}: checkpoint digest mismatch, file is corrupted")
    config = RunConfig.from_json(str(arrays["config"]))
    vae = None
    if bool(arrays["has_vae"]):
        vae = VaeParams(**{k: arrays["vae_" + k] for k in PARAM_NAMES})
    pop = Population(
        ids=arrays["ids"].astype(np.int64), fields=arrays["fields"], objectives=arrays["objectives"],
        valid=arrays["valid"].astype(bool), reasons=[str(r) for r in arrays["reasons"]],
    )
    check_field(pop.fields, make_grid(config), str(path))
    return RunState(
        config=config, iteration=int(arrays["iteration"]), population=pop,
        next_id=int(arrays["next_id"]), hv_ref=arrays["hv_ref"],
        hv_history=[tuple(r) for r in arrays["hv_history"]], vae=vae,
        vae_loss=[tuple(r) for r in arrays["vae_loss"]],
    )


def _write_progress(state: RunState, out: Path):
    save_checkpoint(state, out / CHECKPOINT_NAME)
    io.write_csv(out / "vae_loss.csv", ("iteration", "epoch", "loss"),
                 [(int(i), int(e), float(v)) for i, e, v in state.vae_loss])


# ----------------------------------------------------------------------------
# evolution


def initial_state(config: RunConfig, out) -> RunState:
    grid = make_grid(config)
    ids, fields = load_seeds(out, grid)
    results = evaluate_fields(fields, grid, config.hifi_config(), config.threads)
    pop = _population_from(ids, fields, results)
    for i, r in zip(ids, results):
        if not r.valid:
            log.warning("seed %d is invalid at high fidelity: %s", i, r.reason)
    if not pop.valid.any():
        raise RuntimeError("no seed design is valid at high fidelity; cannot fix the hypervolume reference")
    ref = pop.objectives[pop.valid].max(axis=0)
    pop, ranks = _select(pop, config.evolve.population)
    state = RunState(config=config, iteration=0, population=pop,
                     next_id=int(ids.max()) + 1 if len(ids) else 0, hv_ref=ref,
                     hv_history=[hv_row(0, pop, ranks, ref)])
    return state


def _training_set(pop: Population) -> np.ndarray:
    if pop.valid.sum() >= 2:
        return pop.fields[pop.valid]
    log.warning("fewer than two valid elites; training on the whole archive")
    return pop.fields


def step(state: RunState, grid: StructuredGrid, hifi_cfg: HiFiConfig) -> RunState:
    """One iteration: train on elites, generate, evaluate, merge and select."""
    cfg = state.config
    it = state.iteration + 1
    pop = state.population
    elites = _training_set(pop)
    params = state.vae
    try:
        params, losses = train(elites, cfg.vae, master_seed=cfg.seed, iteration=it)
        state.vae_loss.extend((it, e, v) for e, v in enumerate(losses))
    except (TrainingDiverged, FloatingPointError) as exc:
        log.error("iteration %d: VAE training aborted (%s); reusing previous parameters", it, exc)
    if params is None or len(elites) < 2:
        log.error("iteration %d: no usable generator, population carried over", it)
        offspring = Population.empty(grid.n_elements)
    else:
        kids = latent_crossover(params, elites, cfg.evolve.offspring, crossover_rng(cfg.seed, it),
                                fixed_mask=~grid.design)
        ids = np.arange(state.next_id, state.next_id + len(kids), dtype=np.int64)
        results = evaluate_fields(kids, grid, hifi_cfg, cfg.threads)
        offspring = _population_from(ids, kids, results)
        state.next_id += len(kids)
    merged = pop.concat(offspring)
    survivors, ranks = _select(merged, cfg.evolve.population)
    row = hv_row(it, survivors, ranks, state.hv_ref)
    prev = state.hv_history[-1][1]
    if row[2] <= cfg.evolve.population and row[1] < prev - 1e-12 * max(1.0, abs(prev)):
        log.error("iteration %d: hypervolume decreased from %r to %r", it, prev, row[1])
    if row[2] >= cfg.evolve.population:
        log.info("iteration %d: front 1 fills the archive; hypervolume may drop", it)
    state.population = survivors
    state.vae = params
    state.iteration = it
    state.hv_history.append(row)
    return state


def run_loop(state: RunState, out, on_iteration=None) -> RunState:
    out = Path(out)
    cfg = state.config
    grid = make_grid(cfg)
    hifi_cfg = cfg.hifi_config()
    while not state.finished:
        state = step(state, grid, hifi_cfg)
        log.info("iteration %d: hypervolume %.6g, |front1| %d",
                 state.iteration, state.hv_history[-1][1], state.hv_history[-1][2])
        if state.iteration % cfg.evolve.checkpoint_every == 0 or state.finished:
            _write_progress(state, out)
        if on_iteration is not None:
            on_iteration(state)
    return state


def cmd_evolve(config: RunConfig, out=None, on_iteration=None) -> RunState:
    """Evaluate the seeds and iterate to ``config.evolve.max_iterations``."""
    out = Path(out or config.output)
    io.atomic_write_bytes(out / "config.json", config.to_json().encode())
    state = initial_state(config, out)
    _write_progress(state, out)
    return run_loop(state, out, on_iteration)


def cmd_resume(out, checkpoint=None, max_iterations=None, threads=None, on_iteration=None) -> RunState:
    """Continue from the last checkpoint; a finished run is left untouched."""
    out = Path(out)
    state = load_checkpoint(checkpoint or out / CHECKPOINT_NAME)
    evolve = state.config.evolve
    if max_iterations is not None:
        evolve = type(evolve)(evolve.population, evolve.offspring, int(max_iterations), evolve.checkpoint_every)
    state.config = state.config.replace(evolve=evolve, threads=threads or state.config.threads)
    if state.finished:
        log.warning("run already finished at iteration %d; nothing to do", state.iteration)
        return state
    return run_loop(state, out, on_iteration)


# ----------------------------------------------------------------------------
# report


def pareto_rows(pop: Population):
    """Archive rows sorted by (rank, id); rank 1 is the non-dominated front."""
    if len(pop) == 0:
        return []
    ranks = ranks_from_fronts(non_dominated_sort(pop.objectives), len(pop))
    order = np.lexsort((pop.ids, ranks))
    return [(int(pop.ids[i]), float(pop.objectives[i, 0]), float(pop.objectives[i, 1]), int(ranks[i]) + 1)
            for i in order]


def cmd_report(out, vtk: bool = False, figures: bool = True) -> Path:
    """Write CSVs, PGM fields, optional VTK meshes and PNG figures under ``out/report``."""
    out = Path(out)
    if not out.is_dir():
        raise FileNotFoundError(f"run directory {out} does not exist")
    state = load_checkpoint(out / CHECKPOINT_NAME)
    grid = make_grid(state.config)
    rep = out / "report"
    rep.mkdir(parents=True, exist_ok=True)
    rows = pareto_rows(state.population)
    io.write_csv(rep / "pareto_front.csv", PARETO_HEADER, rows)
    io.write_csv(rep / "hypervolume.csv", HV_HEADER,
                 [(int(r[0]), float(r[1]), int(r[2])) + tuple(float(v) for v in r[3:]) for r in state.hv_history])
    index = {int(i): k for k, i in enumerate(state.population.ids)}
    for cid, *_ in rows:
        io.write_pgm(rep / "fields" / f"cand_{cid:05d}.pgm", grid, state.population.fields[index[cid]])
    if vtk:
        hifi_cfg = state.config.hifi_config()
        (rep / "meshes").mkdir(exist_ok=True)
        for cid, _, _, rank in rows:
            k = index[cid]
            if rank != 1 or not state.population.valid[k]:
                continue
            res = evaluate_hifi(state.population.fields[k], grid, hifi_cfg, keep_mesh=True)
            if res.valid:
                write_vtk(res.mesh, rep / "meshes" / f"cand_{cid:05d}.vtk",
                          cell_data={"von_mises": res.stress_vm}, title=f"candidate {cid}")
    if figures:
        from .plotting import render_report

        render_report(rep / "figures", state, grid, rows)
    meta = {"iteration": state.iteration, "hv_ref": [float(v) for v in state.hv_ref],
            "population": len(state.population)}
    io.atomic_write_bytes(rep / "summary.json", (json.dumps(meta, indent=2) + "\n").encode())
    return rep
