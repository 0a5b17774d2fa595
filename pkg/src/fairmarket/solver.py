"""Regularized ranking LP and its dual.

The primal for one source member is

    maximize   p.z - (gamma / 2) |p|^2
    subject to sum_d p[d, r] = 1 for every slot r,
               |a_c . p - target_c| <= tol_c for every fairness constraint c,
               p_d in T_m = {a >= 0, sum(a) <= 1} for every candidate d,

with ``z[d, r] = u[d] * v[r]`` and ``a_c[d, r] = f_c[d] * v[r]``.  Strong
concavity makes the dual smooth; for dual point ``y`` the primal maximizer is
the blockwise projection ``p_d = Pi_T((z_d - (A^T y)_d) / gamma)``, so only the
small dual vector is optimized.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .constraints import ConstraintVector
from .errors import ShapeError
from .model import check_slots_fit
from .scoring import DualVariables, project_rows

log = logging.getLogger(__name__)

DEFAULT_GAMMA = 0.01


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    ITER_LIMIT = "IterLimit"


@dataclass(frozen=True)
class SolverOptions:
    method: str = "newton"       # or "gradient" (plain projected dual ascent)
    tol: float = 1e-8            # projected dual-gradient max-norm
    max_iter: int = 1000
    max_iter_gradient: int = 100_000
    divergence: float = 1e8
    y0: np.ndarray | None = None


@dataclass(frozen=True)
class AssembledProblem:
    """Vectorized problem; row ``i`` of ``A`` has a dual bounded by ``[lo[i], hi[i]]``.

    Slot rows come first (free duals), then fairness rows: an equality row
    (free dual) when the tolerance is 0, otherwise an upper and a lower
    inequality (non-negative duals).  ``abs`` rows carry penalties
    ``|a.p - b|`` with duals in ``[-1, 1]``.
    """

    z: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    row_kind: tuple
    row_owner: np.ndarray
    constraints: tuple
    gamma: float
    M: int
    m: int

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def rows_of(self, kind: str) -> np.ndarray:
        return np.array([k == kind for k in self.row_kind], dtype=bool)

    def fairness_duals(self, y: np.ndarray) -> np.ndarray:
        """Signed dual per constraint: upper minus lower (or the equality dual)."""
        lam = np.zeros(len(self.constraints))
        for i, (kind, owner) in enumerate(zip(self.row_kind, self.row_owner)):
            if kind in ("eq", "upper"):
                lam[owner] += y[i]
            elif kind == "lower":
                lam[owner] -= y[i]
        return lam

    def dual_variables(self, y: np.ndarray) -> DualVariables:
        abs_rows = self.rows_of("abs")
        weight = 1.0 - float(y[abs_rows].sum()) if abs_rows.any() else 1.0
        return DualVariables(
            eta=y[: self.m],
            lam=self.fairness_duals(y),
            kinds=tuple(c.kind.value for c in self.constraints),
            uv_weight=weight,
        )

    def row_duals(self, duals: DualVariables) -> np.ndarray:
        """Inverse of :meth:`dual_variables` for problems without penalty rows."""
        y = np.zeros(self.n_rows)
        y[: self.m] = duals.eta
        for i, (kind, owner) in enumerate(zip(self.row_kind, self.row_owner)):
            lam = duals.lam[owner] if owner >= 0 else 0.0
            if kind == "eq":
                y[i] = lam
            elif kind == "upper":
                y[i] = max(lam, 0.0)
            elif kind == "lower":
                y[i] = max(-lam, 0.0)
        return y


@dataclass(frozen=True)
class Solution:
    p: np.ndarray
    y: np.ndarray
    duals: DualVariables
    objective: float
    regularized_objective: float
    status: Status
    iterations: int = 0
    residual: float = float("nan")
    M: int = 0
    m: int = 0

    @property
    def P(self) -> np.ndarray:
        return self.p.reshape(self.M, self.m)

    def dump(self) -> str:
        """Plain-text diagnostic dump."""
        lines = [f"status {self.status.value}", f"iterations {self.iterations}",
                 f"objective {self.objective!r}",
                 f"regularized_objective {self.regularized_objective!r}",
                 f"residual {self.residual!r}",
                 "eta " + " ".join(repr(float(x)) for x in self.duals.eta),
                 "lambda " + " ".join(repr(float(x)) for x in self.duals.lam)]
        for d, row in enumerate(self.P):
            lines.append(f"p[{d}] " + " ".join(repr(float(x)) for x in row))
        return "\n".join(lines) + "\n"


def _slot_rows(M: int, m: int) -> np.ndarray:
    S = np.zeros((m, M * m))
    for r in range(m):
        S[r, r::m] = 1.0
    return S


def assemble(u: Sequence[float], v: Sequence[float], constraints: Sequence[ConstraintVector] = (),
             gamma: float = DEFAULT_GAMMA, M: int | None = None, m: int | None = None) -> AssembledProblem:
    u = np.asarray(u, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    M = len(u) if M is None else M
    m = len(v) if m is None else m
    if u.shape != (M,) or v.shape != (m,):
        raise ShapeError(f"u has {u.shape[0]} entries and v {v.shape[0]}, expected {M} and {m}")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    check_slots_fit(M, m)
    rows = [_slot_rows(M, m)]
    b = [np.ones(m)]
    lo = [np.full(m, -np.inf)]
    hi = [np.full(m, np.inf)]
    kinds = ["slot"] * m
    owners = [-1] * m
    constraints = tuple(constraints)
    for c_idx, c in enumerate(constraints):
        if c.f.shape != (M,):
            raise ShapeError(f"constraint {c_idx} has {c.f.shape[0]} coefficients, expected {M}")
        if np.isinf(c.tolerance):
            continue
        a = np.outer(c.f, v).reshape(1, -1)
        if c.tolerance == 0:
            rows.append(a)
            b.append([c.target])
            lo.append([-np.inf])
            hi.append([np.inf])
            kinds.append("eq")
            owners.append(c_idx)
        else:
            rows += [a, -a]
            b.append([c.target + c.tolerance, -(c.target - c.tolerance)])
            lo.append([0.0, 0.0])
            hi.append([np.inf, np.inf])
            kinds += ["upper", "lower"]
            owners += [c_idx, c_idx]
    return AssembledProblem(
        z=np.outer(u, v).reshape(-1), A=np.vstack(rows), b=np.concatenate(b).astype(float),
        lo=np.concatenate(lo).astype(float), hi=np.concatenate(hi).astype(float),
        row_kind=tuple(kinds), row_owner=np.array(owners, dtype=int), constraints=constraints,
        gamma=float(gamma), M=M, m=m)


@dataclass
class _Eval:
    y: np.ndarray
    p: np.ndarray
    support: np.ndarray
    capped: np.ndarray
    value: float
    grad: np.ndarray


def primal_from_duals(problem: AssembledProblem, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = (problem.z - problem.A.T @ y) / problem.gamma
    P, capped = project_rows(x.reshape(problem.M, problem.m))
    return P.reshape(-1), P > 0, capped


def _evaluate(problem: AssembledProblem, y: np.ndarray) -> _Eval:
    p, support, capped = primal_from_duals(problem, y)
    Ap = problem.A @ p
    value = problem.z @ p - 0.5 * problem.gamma * (p @ p) - y @ (Ap - problem.b)
    return _Eval(y, p, support, capped, float(value), problem.b - Ap)


def _hessian(problem: AssembledProblem, ev: _Eval) -> np.ndarray:
    """Generalized Hessian ``A J A^T / gamma`` of the dual at ``ev``."""
    A = problem.A
    S = ev.support.reshape(-1).astype(float)
    AS = A * S
    H = AS @ A.T
    if ev.capped.any():
        w = AS.reshape(A.shape[0], problem.M, problem.m).sum(axis=2)
        n_support = np.maximum(ev.support.sum(axis=1), 1)
        c = np.where(ev.capped, 1.0 / n_support, 0.0)
        H -= (w * c) @ w.T
    return H / problem.gamma


def _projected_grad(problem: AssembledProblem, ev: _Eval) -> np.ndarray:
    return ev.y - np.clip(ev.y - ev.grad, problem.lo, problem.hi)


def _primal_floor(problem: AssembledProblem) -> float:
    """Lower bound on the primal optimum of any feasible instance.

    Every feasible ``p`` has ``sum(p) = m`` and ``|p|^2 <= m``; by weak duality
    a dual value below this bound certifies infeasibility.
    """
    m = problem.m
    floor = -float(np.max(np.abs(problem.z), initial=0.0)) * m - 0.5 * problem.gamma * m
    abs_rows = problem.rows_of("abs")
    if abs_rows.any():
        zmax = float(np.max(np.abs(problem.A[abs_rows]), initial=0.0)) * m
        floor -= float(np.sum(np.abs(problem.b[abs_rows]) + zmax))
    return floor - 1.0


def _diverged(problem: AssembledProblem, ev: _Eval, opts: SolverOptions, floor: float) -> bool:
    return ev.value < floor or float(np.max(np.abs(ev.y), initial=0.0)) > opts.divergence


def _solve_newton(problem: AssembledProblem, y: np.ndarray, opts: SolverOptions) -> tuple[_Eval, int, Status]:
    lo, hi = problem.lo, problem.hi
    floor = _primal_floor(problem)
    ev = _evaluate(problem, y)
    for it in range(1, opts.max_iter + 1):
        pg = _projected_grad(problem, ev)
        pg_norm = float(np.max(np.abs(pg)))
        if pg_norm <= opts.tol:
            return ev, it - 1, Status.OPTIMAL
        if _diverged(problem, ev, opts, floor):
            return ev, it - 1, Status.INFEASIBLE
        bound = ((ev.y <= lo) & (ev.grad > 0)) | ((ev.y >= hi) & (ev.grad < 0))
        free = ~bound
        H = _hessian(problem, ev)[np.ix_(free, free)]
        g = ev.grad[free]
        scale = max(float(np.max(np.diag(H), initial=0.0)), 1.0)
        mu = max(min(pg_norm, 1.0) * 1e-3 * scale, 1e-12 * scale)
        d = np.zeros_like(ev.y)
        try:
            d[free] = -np.linalg.solve(H + mu * np.eye(H.shape[0]), g)
        except np.linalg.LinAlgError:
            d[free] = -g / scale
        ev_new = _line_search(problem, ev, d)
        if ev_new is None:
            # Newton direction failed: fall back to a projected gradient step.
            ev_new = _line_search(problem, ev, -ev.grad / scale)
            if ev_new is None:
                return ev, it, Status.ITER_LIMIT
        ev = ev_new
    pg_norm = float(np.max(np.abs(_projected_grad(problem, ev))))
    return ev, opts.max_iter, Status.OPTIMAL if pg_norm <= opts.tol else Status.ITER_LIMIT


def _line_search(problem: AssembledProblem, ev: _Eval, d: np.ndarray) -> _Eval | None:
    t = 1.0
    pg_ref = float(np.max(np.abs(_projected_grad(problem, ev))))
    for _ in range(60):
        y_new = np.clip(ev.y + t * d, problem.lo, problem.hi)
        step = y_new - ev.y
        if not np.any(step):
            return None
        trial = _evaluate(problem, y_new)
        # minimizing the dual; Armijo along the projection arc
        if trial.value <= ev.value + 1e-4 * (ev.grad @ step):
            return trial
        # near the optimum dual values agree to rounding; accept any step
        # that does not increase the value beyond it and shrinks the residual
        rounding = 1e-13 * max(1.0, abs(ev.value))
        if trial.value <= ev.value + rounding and pg_ref > np.max(np.abs(_projected_grad(problem, trial))):
            return trial
        t *= 0.5
    return None


def _solve_gradient(problem: AssembledProblem, y: np.ndarray, opts: SolverOptions) -> tuple[_Eval, int, Status]:
    row_norm2 = float(np.max(np.sum(problem.A ** 2, axis=1)))
    eta = problem.gamma / (row_norm2 * problem.n_rows)
    floor = _primal_floor(problem)
    ev = _evaluate(problem, y)
    for it in range(1, opts.max_iter_gradient + 1):
        if np.max(np.abs(_projected_grad(problem, ev))) <= opts.tol:
            return ev, it - 1, Status.OPTIMAL
        if _diverged(problem, ev, opts, floor):
            return ev, it - 1, Status.INFEASIBLE
        ev = _evaluate(problem, np.clip(ev.y - eta * ev.grad, problem.lo, problem.hi))
    return ev, opts.max_iter_gradient, Status.ITER_LIMIT


def _finish(problem: AssembledProblem, ev: _Eval, iterations: int, status: Status) -> Solution:
    p = ev.p
    lp_obj = float(problem.z @ p)
    abs_rows = problem.rows_of("abs")
    if abs_rows.any():
        penalty = float(np.sum(np.abs(problem.A[abs_rows] @ p - problem.b[abs_rows])))
        objective = penalty
        reg = -penalty - 0.5 * problem.gamma * float(p @ p)
    else:
        objective = lp_obj
        reg = lp_obj - 0.5 * problem.gamma * float(p @ p)
    residual = float(np.max(np.abs(_projected_grad(problem, ev)), initial=0.0))
    return Solution(p=p, y=ev.y, duals=problem.dual_variables(ev.y), objective=objective,
                    regularized_objective=reg, status=status, iterations=iterations,
                    residual=residual, M=problem.M, m=problem.m)


def initial_duals(problem: AssembledProblem) -> np.ndarray:
    """Starting point: each slot dual water-fills its own column to unit mass.

    Ignores the coupling through the per-candidate simplexes, but starts the
    dual far closer to the optimum than zero does when ``z / gamma`` is large.
    """
    y = np.zeros(problem.n_rows)
    Z = problem.z.reshape(problem.M, problem.m) / problem.gamma
    for r, row in enumerate(np.flatnonzero(problem.rows_of("slot"))):
        x = np.sort(Z[:, r])[::-1]
        css = np.cumsum(x) - 1.0
        k = np.arange(1, x.size + 1)
        rho = int(np.flatnonzero(x - css / k > 0)[-1])
        y[row] = problem.gamma * css[rho] / (rho + 1)
    return y


def solve(problem: AssembledProblem, opts: SolverOptions | None = None) -> Solution:
    """Solve the regularized problem through its dual.

    Infeasibility shows up as dual divergence; the last iterate is returned
    with status ``Infeasible``.
    """
    opts = opts or SolverOptions()
    y0 = initial_duals(problem) if opts.y0 is None else np.asarray(opts.y0, dtype=float)
    if y0.shape != (problem.n_rows,):
        raise ShapeError(f"warm start has {y0.shape} duals, problem has {problem.n_rows} rows")
    y0 = np.clip(y0, problem.lo, problem.hi)
    if opts.method == "newton":
        ev, iters, status = _solve_newton(problem, y0, opts)
        if status is Status.ITER_LIMIT and np.any(y0):
            # a stalled start is retried from the origin before giving up
            ev0, iters0, status0 = _solve_newton(problem, np.clip(np.zeros_like(y0), problem.lo, problem.hi), opts)
            iters += iters0
            if status0 is not Status.ITER_LIMIT:
                ev, status = ev0, status0
    elif opts.method == "gradient":
        ev, iters, status = _solve_gradient(problem, y0, opts)
    else:
        raise ValueError(f"unknown solver method {opts.method!r}")
    if status is not Status.OPTIMAL:
        log.debug("solver stopped with %s after %d iterations", status.value, iters)
    return _finish(problem, ev, iters, status)


def with_source_targets(problem: AssembledProblem, source_targets: Sequence[float]) -> AssembledProblem:
    """Replace the objective by ``-sum_k |p.z - c_k|`` (epigraph rows with duals in [-1, 1])."""
    targets = np.asarray(source_targets, dtype=float).reshape(-1)
    if targets.size == 0:
        raise ValueError("need at least one source target")
    K = targets.size
    return AssembledProblem(
        z=np.zeros_like(problem.z),
        A=np.vstack([problem.A, np.tile(problem.z, (K, 1))]),
        b=np.concatenate([problem.b, targets]),
        lo=np.concatenate([problem.lo, -np.ones(K)]),
        hi=np.concatenate([problem.hi, np.ones(K)]),
        row_kind=problem.row_kind + ("abs",) * K,
        row_owner=np.concatenate([problem.row_owner, -np.ones(K, dtype=int)]),
        constraints=problem.constraints, gamma=problem.gamma, M=problem.M, m=problem.m)


def solve_source_fair(problem: AssembledProblem, source_targets: Sequence[float],
                      opts: SolverOptions | None = None) -> Solution:
    """Minimize ``sum_k |u^T P v - c_k|`` (plus the regularizer) under the same constraints.

    ``Solution.objective`` is the attained total gap.
    """
    return solve(with_source_targets(problem, source_targets), opts)


@dataclass(frozen=True)
class KKTReport:
    stationarity: float
    primal_feasibility: float
    complementary_slackness: float
    dual_feasibility: float = 0.0
    details: dict = field(default_factory=dict, compare=False)

    @property
    def worst(self) -> float:
        return max(self.stationarity, self.primal_feasibility,
                   self.complementary_slackness, self.dual_feasibility)


def kkt_residuals(problem: AssembledProblem, solution: Solution | None = None, *,
                  p: np.ndarray | None = None, y: np.ndarray | None = None) -> KKTReport:
    """Max-norm KKT residuals of a primal/dual pair.

    Stationarity uses the projection fixed point
    ``p_d = Pi_T((z_d - (A^T y)_d) / gamma)``, which is equivalent to the
    Lagrangian stationarity conditions over each block ``T_m``.
    """
    if solution is not None:
        p = solution.p if p is None else p
        y = solution.y if y is None else y
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    p_fix, _, _ = primal_from_duals(problem, y)
    stationarity = float(np.max(np.abs(p - p_fix)))

    Ap = problem.A @ p
    kinds = np.array(problem.row_kind)
    eq = (kinds == "slot") | (kinds == "eq")
    ineq = (kinds == "upper") | (kinds == "lower")
    pen = kinds == "abs"
    P = p.reshape(problem.M, problem.m)
    viol = [np.abs(Ap[eq] - problem.b[eq]),
            np.maximum(Ap[ineq] - problem.b[ineq], 0.0),
            np.maximum(-P, 0.0).reshape(-1),
            np.maximum(P.sum(axis=1) - 1.0, 0.0)]
    primal = float(max(np.max(x, initial=0.0) for x in viol))

    slack = problem.b - Ap
    comp = np.abs(y[ineq] * slack[ineq])
    if pen.any():
        natural = np.abs(y[pen] - np.clip(y[pen] - slack[pen], -1.0, 1.0))
        comp = np.concatenate([comp, natural])
    complementary = float(np.max(comp, initial=0.0))
    dual_feas = float(np.max(np.concatenate([np.maximum(problem.lo - y, 0.0),
                                             np.maximum(y - problem.hi, 0.0)]), initial=0.0))
    return KKTReport(stationarity, primal, complementary, dual_feas)
