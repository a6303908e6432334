"""Gradient-based low-fidelity design: volume-constrained p-norm stress minimization.

Density filter -> SIMP analysis -> qp-relaxed von Mises stress -> p-norm
aggregate with continuation on P -> adjoint sensitivities -> MMA step.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import VM_FORM, SolverError, StructuredFEM, solve
from .geometry import BCSet, MaterialModel, StructuredGrid, boundary_conditions
from .mma import MmaInfeasibleError, MmaProblem, MmaState, mma_update
from .rng import STREAM_LOWFI_START, stream

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FilterOperator:
    """Hat-weight neighbourhood matrix ``H`` (w = (r0 - r)/r0 for r < r0) and row sums."""

    H: sp.csr_matrix
    Hs: np.ndarray
    radius: float


def build_filter(grid: StructuredGrid, radius: float) -> FilterOperator:
    es = grid.element_size
    reach = int(np.ceil(radius / es))
    ij = grid.cell_ij
    lookup = np.full((grid.ny, grid.nx), -1, dtype=np.int64)
    lookup[ij[:, 1], ij[:, 0]] = np.arange(grid.n_elements)
    rows, cols, vals = [], [], []
    for di in range(-reach, reach + 1):
        for dj in range(-reach, reach + 1):
            r = es * np.hypot(di, dj)
            if r >= radius:
                continue
            ni, nj = ij[:, 0] + di, ij[:, 1] + dj
            ok = (ni >= 0) & (ni < grid.nx) & (nj >= 0) & (nj < grid.ny)
            src = np.flatnonzero(ok)
            nb = lookup[nj[ok], ni[ok]]
            keep = nb >= 0
            rows.append(src[keep])
            cols.append(nb[keep])
            vals.append(np.full(keep.sum(), (radius - r) / radius))
    n = grid.n_elements
    H = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    H.sum_duplicates()
    H.sort_indices()
    return FilterOperator(H=H, Hs=np.asarray(H.sum(axis=1)).ravel(), radius=radius)


def apply_filter(filt: FilterOperator, rho, design=None) -> np.ndarray:
    """Weighted neighbour average; cells outside ``design`` are re-pinned to 1."""
    out = filt.H @ np.asarray(rho, dtype=float) / filt.Hs
    if design is not None:
        out = np.where(design, out, 1.0)
    return np.clip(out, 0.0, 1.0)


def relaxation(rho_filtered, q: float) -> np.ndarray:
    """qp stress interpolation eta = rho~^q."""
    return np.asarray(rho_filtered, dtype=float) ** q


def pnorm(values, P: float) -> float:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return 0.0
    m = v.max()
    if m <= 0:
        return 0.0
    return float(m * np.sum((v / m) ** P) ** (1.0 / P))


@dataclass(frozen=True)
class ContinuationSchedule:
    values: tuple = (8.0, 16.0, 32.0)
    interval: int = 30

    def __post_init__(self):
        if len(self.values) == 0 or any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("P values must be strictly increasing")
        if self.interval < 1:
            raise ValueError("continuation interval must be positive")

    def P_at(self, iteration: int) -> float:
        """P for a 0-based iteration index."""
        stage = min(iteration // self.interval, len(self.values) - 1)
        return float(self.values[stage])

    @classmethod
    def fixed(cls, P: float):
        return cls(values=(float(P),), interval=1)


@dataclass(frozen=True)
class LowFiConfig:
    volume_fraction: float = 0.335
    max_iter: int = 200
    move: float = 0.05
    schedule: ContinuationSchedule = field(default_factory=ContinuationSchedule)
    material: MaterialModel = field(default_factory=MaterialModel)
    filter_radius: float = 0.05
    force: float = 1.0
    volume_on_filtered: bool = True

    def __post_init__(self):
        if not 0 < self.volume_fraction <= 1:
            raise ValueError("volume fraction bound must lie in (0, 1]")
        if not 0 < self.move <= 1:
            raise ValueError("move limit must lie in (0, 1]")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")


@dataclass
class Evaluation:
    sigma_pn: float
    grad: np.ndarray | None
    volume: float
    dvolume: np.ndarray
    rho: np.ndarray
    rho_filtered: np.ndarray
    stress: np.ndarray
    vm: np.ndarray
    relaxed_vm: np.ndarray
    u: np.ndarray

    @property
    def max_relaxed_vm(self) -> float:
        return float(self.relaxed_vm.max())


class LowFiProblem:
    """Volume-constrained p-norm stress problem on one grid.

    Design variables are the densities of the design cells only; frozen
    cells stay at 1 and count towards the volume as fixed material.
    """

    def __init__(self, grid: StructuredGrid, material: MaterialModel = None,
                 filter_radius: float = 0.05, bcs: BCSet = None, force: float = 1.0,
                 volume_on_filtered: bool = True):
        self.grid = grid
        self.material = material or MaterialModel()
        self.bcs = bcs if bcs is not None else boundary_conditions(grid, force)
        self.filter = build_filter(grid, filter_radius)
        self.fem = StructuredFEM(grid, self.material)
        self.design = grid.design
        self.volume_on_filtered = volume_on_filtered
        # d(rho~)/dx restricted to design rows and columns
        Hd = sp.diags(np.where(self.design, 1.0 / self.filter.Hs, 0.0)) @ self.filter.H
        self._dfilter = Hd.tocsc()[:, self.design].tocsr()

    @property
    def n_design(self) -> int:
        return int(self.design.sum())

    def full_density(self, x) -> np.ndarray:
        rho = np.ones(self.grid.n_elements)
        rho[self.design] = x
        return rho

    def filtered(self, x) -> np.ndarray:
        return apply_filter(self.filter, self.full_density(x), self.design)

    def chain(self, g_rho_filtered) -> np.ndarray:
        """Pull a gradient w.r.t. rho~ back to the design variables."""
        return self._dfilter.T @ g_rho_filtered

    def evaluate(self, x, P: float, gradient: bool = True) -> Evaluation:
        mat = self.material
        x = np.asarray(x, dtype=float)
        rho = self.full_density(x)
        rhot = apply_filter(self.filter, rho, self.design)
        K = self.fem.assemble(rhot)
        u, lu = solve(K, self.bcs.force, self.bcs.fixed_dofs, factor=True)
        stress = self.fem.stresses(u)
        vm = np.sqrt(np.maximum(np.einsum("ei,ij,ej->e", stress, VM_FORM, stress), 0.0))
        eta = relaxation(rhot, mat.q)
        svm = eta * vm
        spn = pnorm(svm, P)

        n = self.grid.n_elements
        if self.volume_on_filtered:
            volume = float(rhot.mean())
            dvolume = self.chain(np.full(n, 1.0 / n))
        else:
            volume = float(rho.mean())
            dvolume = np.full(self.n_design, 1.0 / n)

        grad = None
        if gradient:
            grad = self._gradient(rhot, u, lu, stress, vm, eta, svm, spn, P)
        return Evaluation(spn, grad, volume, dvolume, rho, rhot, stress, vm, svm, u)

    def _gradient(self, rhot, u, lu, stress, vm, eta, svm, spn, P):
        mat = self.material
        if spn <= 0:
            return np.zeros(self.n_design)
        w = (svm / spn) ** (P - 1)  # d sigma_pn / d svm
        # explicit part through eta(rho~)
        with np.errstate(divide="ignore", invalid="ignore"):
            deta = np.where(rhot > 0, mat.q * rhot ** (mat.q - 1), 0.0)
        g_explicit = w * deta * vm
        # adjoint load: d sigma_pn / d u
        with np.errstate(divide="ignore", invalid="ignore"):
            dvm_ds = np.where(vm[:, None] > 0, stress @ VM_FORM / vm[:, None], 0.0)
        coef = (w * eta)[:, None] * dvm_ds  # (n, 3)
        edofs = self.fem.edofs
        rhs_e = coef @ self.fem.S  # (n, 8)
        rhs = np.bincount(edofs.ravel(), weights=rhs_e.ravel(), minlength=self.grid.n_dofs)
        lam = lu.solve(rhs)
        dE = mat.simp_modulus_derivative(rhot)
        ue, le = u[edofs], lam[edofs]
        g_implicit = -dE * np.einsum("ei,ij,ej->e", le, self.fem.Ke, ue)
        return self.chain(g_explicit + g_implicit)

    def initial_design(self, value: float) -> np.ndarray:
        return np.full(self.n_design, float(np.clip(value, 0.0, 1.0)))


@dataclass
class LowFiResult:
    x: np.ndarray
    rho: np.ndarray
    rho_filtered: np.ndarray
    history: list  # rows (iteration, P, sigma_pn, max_relaxed_vm, volume_fraction)
    max_relaxed_vm: float
    volume_fraction: float
    volume_bound: float
    max_step: float = 0.0
    multipliers: list = field(default_factory=list)

    HISTORY_HEADER = ("iteration", "P", "sigma_pn", "max_relaxed_vm", "volume_fraction")


class LowFiError(RuntimeError):
    def __init__(self, message, iterate=None):
        super().__init__(message)
        self.iterate = iterate


def run_lowfi(problem: LowFiProblem, config: LowFiConfig, x0=None) -> LowFiResult:
    """Optimize from ``x0`` (homogeneous at the volume bound when omitted)."""
    x = problem.initial_design(config.volume_fraction) if x0 is None else np.array(x0, float)
    state = MmaState(x)
    history = []
    multipliers = []
    max_step = 0.0
    P_prev = None
    for it in range(config.max_iter):
        P = config.schedule.P_at(it)
        if P_prev is not None and P != P_prev:
            state.reset()
        P_prev = P
        ev = problem.evaluate(state.x, P)
        history.append((it, P, ev.sigma_pn, ev.max_relaxed_vm, ev.volume))
        mp = MmaProblem(
            f0=ev.sigma_pn,
            df0=ev.grad,
            g=[ev.volume - config.volume_fraction],
            dg=[ev.dvolume],
            move=config.move,
        )
        x_old = state.x.copy()
        try:
            mma_update(state, mp)
        except MmaInfeasibleError as exc:
            raise LowFiError(f"iteration {it}: {exc}", iterate=x_old) from exc
        max_step = max(max_step, float(np.abs(state.x - x_old).max()))
        multipliers.append(state.lam)

    P = config.schedule.P_at(config.max_iter - 1)
    ev = problem.evaluate(state.x, P, gradient=False)
    history.append((config.max_iter, P, ev.sigma_pn, ev.max_relaxed_vm, ev.volume))
    return LowFiResult(
        x=state.x.copy(),
        rho=ev.rho,
        rho_filtered=ev.rho_filtered,
        history=history,
        max_relaxed_vm=ev.max_relaxed_vm,
        volume_fraction=ev.volume,
        volume_bound=config.volume_fraction,
        max_step=max_step,
        multipliers=multipliers,
    )


def start_value(fraction: float, run_index: int, master_seed: int, seed_index: int) -> float:
    """Homogeneous start density; the first run per fraction starts at the bound.

    Later runs start below the bound, so the volume constraint is reachable
    from the first MMA step whatever the move limit.
    """
    if run_index == 0:
        return fraction
    rng = stream(master_seed, STREAM_LOWFI_START, seed_index)
    return float(np.clip(fraction * rng.uniform(0.6, 1.0), 0.05, 1.0))


def seed_plan(fractions, n_seeds=None, master_seed: int = 0):
    """List of (seed_index, fraction, start value) for ``n_seeds`` runs."""
    fractions = list(fractions)
    if not fractions:
        raise ValueError("empty volume fraction list")
    n_seeds = len(fractions) if n_seeds is None else int(n_seeds)
    plan = []
    for k in range(n_seeds):
        frac = float(fractions[k % len(fractions)])
        r = k // len(fractions)
        plan.append((k, frac, start_value(frac, r, master_seed, k)))
    return plan


def _run_one(args):
    problem, config, start = args
    try:
        return run_lowfi(problem, config, problem.initial_design(start))
    except (LowFiError, SolverError, FloatingPointError, ValueError) as exc:
        return exc


def seed_population(problem: LowFiProblem, fractions, n_seeds=None, base: LowFiConfig = None,
                    master_seed: int = 0, workers: int = 1):
    """Run one low-fidelity optimization per planned seed.

    Returns a list of ``(seed_index, LowFiResult)`` for the surviving runs.
    """
    base = base or LowFiConfig()
    plan = seed_plan(fractions, n_seeds, master_seed)
    jobs = []
    for k, frac, start in plan:
        cfg = LowFiConfig(
            volume_fraction=frac, max_iter=base.max_iter, move=base.move,
            schedule=base.schedule, material=base.material,
            filter_radius=base.filter_radius, force=base.force,
            volume_on_filtered=base.volume_on_filtered,
        )
        jobs.append((problem, cfg, start))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_one, jobs))
    else:
        outcomes = [_run_one(job) for job in jobs]
    survivors = []
    for (k, frac, _), out in zip(plan, outcomes):
        if isinstance(out, Exception):
            log.warning("seed %d (V/Vmax <= %.3f) failed: %s", k, frac, out)
            continue
        survivors.append((k, out))
    if 2 * len(survivors) < len(plan):
        raise RuntimeError(f"only {len(survivors)} of {len(plan)} low-fidelity runs succeeded")
    return survivors
