"""Method of Moving Asymptotes for one objective and at most one inequality constraint.

Each update builds Svanberg's separable convex approximation around the
current iterate and solves it through its one-dimensional dual.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

ASYINIT = 0.5
ASYDECR = 0.7
ASYINCR = 1.2
ALBEFA = 0.1
RAA0 = 1e-5
ASYMIN = 1e-5
DUAL_TOL = 1e-9


class MmaInfeasibleError(RuntimeError):
    pass


@dataclass
class MmaProblem:
    """Function data at the current iterate; ``g`` holds constraint values g(x) <= 0."""

    f0: float
    df0: np.ndarray
    g: np.ndarray | None = None
    dg: np.ndarray | None = None
    xmin: np.ndarray | float = 0.0
    xmax: np.ndarray | float = 1.0
    move: float = 0.05
    names: tuple = ("volume",)

    def __post_init__(self):
        self.df0 = np.asarray(self.df0, dtype=float)
        if self.g is not None:
            self.g = np.atleast_1d(np.asarray(self.g, dtype=float))
            self.dg = np.atleast_2d(np.asarray(self.dg, dtype=float))
            if self.dg.shape != (len(self.g), len(self.df0)):
                raise ValueError("constraint gradient shape mismatch")
            if len(self.g) > 1:
                raise ValueError("only a single constraint is supported")
        if not (np.isfinite(self.f0) and np.all(np.isfinite(self.df0))):
            raise ValueError("non-finite objective data")

    @property
    def m(self) -> int:
        return 0 if self.g is None else len(self.g)


@dataclass
class MmaState:
    x: np.ndarray
    xold1: np.ndarray | None = None
    xold2: np.ndarray | None = None
    low: np.ndarray | None = None
    upp: np.ndarray | None = None
    iteration: int = 0
    lam: float = 0.0
    max_step: float = 0.0  # largest |x_new - x| component over all updates so far
    # approximation coefficients of the last subproblem (objective row first)
    p: np.ndarray | None = field(default=None, repr=False)
    q: np.ndarray | None = field(default=None, repr=False)
    x_center: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.x = np.array(self.x, dtype=float)

    def reset(self):
        """Forget iterate history so the asymptotes restart from their initial spread."""
        self.xold1 = self.xold2 = None
        self.low = self.upp = None
        self.iteration = 0

    def curvature(self, x=None):
        """Second derivative of each approximation term (rows: objective, constraint)."""
        x = self.x_center if x is None else x
        return 2 * self.p / (self.upp - x) ** 3 + 2 * self.q / (x - self.low) ** 3


def _asymptotes(state: MmaState, xmin, xmax):
    x = state.x
    span = xmax - xmin
    if state.iteration < 2 or state.low is None:
        low = x - ASYINIT * span
        upp = x + ASYINIT * span
    else:
        trend = (x - state.xold1) * (state.xold1 - state.xold2)
        factor = np.ones_like(x)
        factor[trend > 0] = ASYINCR
        factor[trend < 0] = ASYDECR
        low = x - factor * (state.xold1 - state.low)
        upp = x + factor * (state.upp - state.xold1)
        low = np.clip(low, x - 10 * span, x - ASYMIN * span)
        upp = np.clip(upp, x + ASYMIN * span, x + 10 * span)
    return low, upp


def _coefficients(grad, x, low, upp, span):
    pos = np.maximum(grad, 0)
    neg = np.maximum(-grad, 0)
    reg = RAA0 / span
    p = (upp - x) ** 2 * (1.001 * pos + 0.001 * neg + reg)
    q = (x - low) ** 2 * (0.001 * pos + 1.001 * neg + reg)
    return p, q


def mma_update(state: MmaState, problem: MmaProblem) -> np.ndarray:
    """Advance ``state`` by one MMA step and return the new iterate."""
    x = state.x
    n = len(x)
    if len(problem.df0) != n:
        raise ValueError("gradient length differs from variable count")
    xmin = np.broadcast_to(np.asarray(problem.xmin, dtype=float), (n,))
    xmax = np.broadcast_to(np.asarray(problem.xmax, dtype=float), (n,))
    span = np.maximum(xmax - xmin, 1e-12)

    low, upp = _asymptotes(state, xmin, xmax)
    alpha = np.maximum.reduce([xmin, low + ALBEFA * (x - low), x - problem.move])
    beta = np.minimum.reduce([xmax, upp - ALBEFA * (upp - x), x + problem.move])

    p0, q0 = _coefficients(problem.df0, x, low, upp, span)
    if problem.m:
        p1, q1 = _coefficients(problem.dg[0], x, low, upp, span)
        # constant term so the approximation matches g at x
        r1 = problem.g[0] - np.sum(p1 / (upp - x) + q1 / (x - low))
    else:
        p1 = q1 = np.zeros(n)
        r1 = 0.0

    def primal(lam):
        P = p0 + lam * p1
        Q = q0 + lam * q1
        sp_, sq_ = np.sqrt(P), np.sqrt(Q)
        denom = sp_ + sq_
        with np.errstate(invalid="ignore", divide="ignore"):
            xs = np.where(denom > 0, (low * sp_ + upp * sq_) / denom, x)
        return np.clip(xs, alpha, beta)

    def approx_g(lam):
        xs = primal(lam)
        return r1 + np.sum(p1 / (upp - xs) + q1 / (xs - low))

    lam = 0.0
    if problem.m and approx_g(0.0) > 0:
        hi = 1.0
        while approx_g(hi) > 0:
            hi *= 10
            if hi > 1e12:
                break
        if approx_g(hi) > DUAL_TOL:
            raise MmaInfeasibleError(
                f"constraint '{problem.names[0]}' cannot be satisfied within the move limit "
                f"(best approximate value {approx_g(hi):.3e})"
            )
        if approx_g(hi) > 0:
            lam = hi
        else:
            lam = brentq(approx_g, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        if approx_g(lam) > DUAL_TOL:
            # the root may land a hair on the infeasible side
            lam_hi = lam
            while approx_g(lam_hi) > DUAL_TOL:
                lam_hi = lam_hi * (1 + 1e-12) + 1e-15
            lam = lam_hi

    xnew = primal(lam)
    # x +- move rounds, so the step can exceed the limit by an ulp; pull it back
    for _ in range(4):
        over = np.abs(xnew - x) > problem.move
        if not over.any():
            break
        xnew[over] = np.nextafter(xnew[over], x[over])
    step = float(np.max(np.abs(xnew - x), initial=0.0))
    if step > problem.move:
        raise RuntimeError(f"move limit violated: step {step!r} > {problem.move!r}")
    state.max_step = max(state.max_step, step)
    state.xold2 = None if state.xold1 is None else state.xold1.copy()
    state.xold1 = x.copy()
    state.low, state.upp = low, upp
    state.p = np.vstack([p0, p1])
    state.q = np.vstack([q0, q1])
    state.x_center = x.copy()
    state.lam = float(lam)
    state.x = xnew
    state.iteration += 1
    return xnew


def kkt_residual(state: MmaState, problem: MmaProblem) -> float:
    """Projected stationarity plus complementarity and feasibility norm.

    ``problem`` must hold function data at ``state.x``; the multiplier is the
    one found by the last subproblem.
    """
    x = state.x
    lam = state.lam if problem.m else 0.0
    grad = problem.df0 + (lam * problem.dg[0] if problem.m else 0.0)
    xmin = np.broadcast_to(np.asarray(problem.xmin, dtype=float), x.shape)
    xmax = np.broadcast_to(np.asarray(problem.xmax, dtype=float), x.shape)
    stat = x - np.clip(x - grad, xmin, xmax)
    terms = [np.sum(stat**2)]
    if problem.m:
        g = problem.g[0]
        terms += [(lam * g) ** 2, max(g, 0.0) ** 2]
    return float(np.sqrt(sum(terms)))
