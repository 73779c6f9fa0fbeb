"""Solvers and the bound dispatcher.

The LP engine is a dense revised simplex (refactorized every pivot, Dantzig
pricing with a Bland fallback after degenerate stalls) that always exposes
row duals; masters start from an artificial identity basis under a big-M
penalty, with a two-phase variant behind a flag.  Integer programs go to the
HiGHS branch-and-bound through scipy with both MIP gaps pinned to zero, and
every pricing answer is re-evaluated exactly before it is trusted.
"""

from __future__ import annotations

import time
import warnings
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import Bounds as _Bounds
from scipy.optimize import LinearConstraint as _LinearConstraint
from scipy.optimize import milp as _scipy_milp

from .dist import EmpiricalDistribution
from .errors import SizeLimitError
from .graph import CausalGraph
from .lpform import (
    ConstraintSystem,
    IntegerProgramSpec,
    LinearProgramSpec,
    build_constraints,
    build_direct_lp,
    build_pricing_milp,
    build_single_milp,
    decode_pricing_bits,
    decode_single_milp,
)
from .objective import BitPolynomial, build_objective, combine_linear

DEFAULT_EPS = 1e-9
DEFAULT_BIG_M = 1e4
DEFAULT_MAX_ITER = 500
ARTIFICIAL_TOL = 1e-7
BLAND_AFTER = 50


class SolverError(RuntimeError):
    """Numerical breakdown or an exceeded pivot budget."""


class DuplicateColumnError(SolverError):
    """Pricing returned a column already in the master.

    This is the classic silent-loop failure mode of column generation, so it
    is a hard error: it indicates a dual or tolerance bug, not a recoverable
    condition.
    """


class TimeLimitExceeded(SolverError):
    """Cooperative wall-clock limit hit inside a solver loop."""


@dataclass
class LpSolution:
    status: str  # optimal | infeasible | unbounded
    objective: float | None
    x: np.ndarray | None
    duals: np.ndarray | None
    iterations: int
    basis: tuple[int, ...] | None = None


@dataclass
class MilpSolution:
    status: str  # optimal | infeasible | unbounded | time_limit
    objective: float | None
    x: np.ndarray | None


# -- simplex core -----------------------------------------------------------------


def _simplex_core(
    A: np.ndarray,
    b: np.ndarray,
    c: np.ndarray,
    basis: list[int],
    *,
    tol: float = DEFAULT_EPS,
    max_pivots: int = 200_000,
    allowed: np.ndarray | None = None,
    deadline: float | None = None,
) -> tuple[str, np.ndarray, np.ndarray, int]:
    """Primal simplex from a feasible basis; returns (status, x, duals, pivots).

    Entering rule is Dantzig (most negative reduced cost, lowest index on
    ties) until `BLAND_AFTER` consecutive degenerate pivots, then Bland's rule
    for the rest of the run.  The leaving rule breaks ratio ties by smallest
    basic variable index, which keeps the Bland regime cycle-free.
    """
    m, n = A.shape
    bland = False
    degenerate_run = 0
    pivots = 0
    while True:
        if deadline is not None and time.perf_counter() > deadline:
            raise TimeLimitExceeded("simplex wall-clock limit exceeded")
        B = A[:, basis]
        try:
            x_b = np.linalg.solve(B, b)
            y = np.linalg.solve(B.T, c[basis])
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"singular basis encountered: {exc}") from exc
        reduced = c - y @ A
        reduced[basis] = 0.0
        if allowed is not None:
            reduced = np.where(allowed, reduced, np.inf)
        if bland:
            negative = np.nonzero(reduced < -tol)[0]
            if negative.size == 0:
                break
            j = int(negative[0])
        else:
            j = int(np.argmin(reduced))
            if reduced[j] >= -tol:
                break
        direction = np.linalg.solve(B, A[:, j])
        positive = direction > 1e-11
        if not positive.any():
            return "unbounded", x_b, y, pivots
        ratios = np.where(positive, x_b / np.where(positive, direction, 1.0), np.inf)
        theta = ratios[positive].min()
        ties = np.nonzero((ratios <= theta + 1e-12) & positive)[0]
        leave_pos = min(ties, key=lambda i: basis[i])
        if theta <= 1e-12:
            degenerate_run += 1
            if degenerate_run > BLAND_AFTER:
                bland = True
        else:
            degenerate_run = 0
        basis[leave_pos] = j
        pivots += 1
        if pivots > max_pivots:
            raise SolverError(f"pivot budget {max_pivots} exhausted")
    x = np.zeros(n)
    x[basis] = np.maximum(x_b, 0.0)
    return "optimal", x, y, pivots


def _solve_equalities(
    A: np.ndarray,
    b: np.ndarray,
    c: np.ndarray,
    *,
    tol: float = DEFAULT_EPS,
    big_m: float = DEFAULT_BIG_M,
    phase_one: bool = False,
    deadline: float | None = None,
) -> LpSolution:
    """min c.x s.t. A x = b, x >= 0, with artificial-variable initialization."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    m, n = A.shape
    flip = b < 0
    if flip.any():
        A = A.copy()
        b = b.copy()
        A[flip] *= -1.0
        b[flip] *= -1.0

    A_ext = np.hstack([A, np.eye(m)])
    art = list(range(n, n + m))
    basis = art.copy()
    total_pivots = 0
    if phase_one:
        c1 = np.concatenate([np.zeros(n), np.ones(m)])
        status, x, _, pivots = _simplex_core(A_ext, b, c1, basis, tol=tol, deadline=deadline)
        total_pivots += pivots
        if status != "optimal" or float(x[n:].sum()) > ARTIFICIAL_TOL:
            return LpSolution("infeasible", None, None, None, total_pivots)
        c2 = np.concatenate([c, np.zeros(m)])
        allowed = np.concatenate([np.ones(n, dtype=bool), np.zeros(m, dtype=bool)])
        status, x, y, pivots = _simplex_core(
            A_ext, b, c2, basis, tol=tol, allowed=allowed, deadline=deadline
        )
        total_pivots += pivots
        if status != "optimal":
            return LpSolution(status, None, None, None, total_pivots, tuple(basis))
        return LpSolution("optimal", float(c @ x[:n]), x[:n], y, total_pivots, tuple(basis))

    c_ext = np.concatenate([c, np.full(m, big_m)])
    status, x, y, pivots = _simplex_core(A_ext, b, c_ext, basis, tol=tol, deadline=deadline)
    total_pivots += pivots
    if status != "optimal":
        return LpSolution(status, None, None, None, total_pivots, tuple(basis))
    if float(x[n:].sum()) > ARTIFICIAL_TOL:
        return LpSolution("infeasible", None, None, None, total_pivots, tuple(basis))
    return LpSolution("optimal", float(c @ x[:n]), x[:n], y, total_pivots, tuple(basis))


def solve_lp(
    spec: LinearProgramSpec,
    *,
    tol: float = DEFAULT_EPS,
    big_m: float = DEFAULT_BIG_M,
    phase_one: bool = False,
    time_limit: float | None = None,
) -> LpSolution:
    """Exact optimum of a materialized LP with row duals.

    The reported objective follows the spec's sense; duals always refer to
    the internally minimized form, which is what the pricing problem expects.
    """
    sign = 1.0 if spec.sense == "min" else -1.0
    deadline = time.perf_counter() + time_limit if time_limit else None
    sol = _solve_equalities(
        spec.columns,
        spec.rhs,
        sign * spec.objective,
        tol=tol,
        big_m=big_m,
        phase_one=phase_one,
        deadline=deadline,
    )
    if sol.status == "optimal":
        sol.objective = sign * sol.objective
    return sol


# -- integer programs ---------------------------------------------------------------


def solve_milp(spec: IntegerProgramSpec, *, time_limit: float | None = None) -> MilpSolution:
    """Proven-optimal solution of a 0/1 mixed program (HiGHS, zero MIP gaps)."""
    mat, lo, hi = spec.constraint_matrix()
    c = spec.objective_vector()
    options: dict = {"presolve": True, "mip_rel_gap": 0.0, "mip_abs_gap": 0.0}
    if time_limit is not None:
        options["time_limit"] = float(time_limit)
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="Unrecognized options detected")
        res = _scipy_milp(
            c=c,
            constraints=[_LinearConstraint(mat, lo, hi)] if spec.rows else [],
            integrality=np.array(spec.binary, dtype=float),
            bounds=_Bounds(np.array(spec.lower, dtype=float), np.array(spec.upper, dtype=float)),
            options=options,
        )
    status = {0: "optimal", 1: "iteration_limit", 2: "infeasible", 3: "unbounded"}.get(
        res.status, "failed"
    )
    if status == "iteration_limit":
        status = "time_limit"
    if status != "optimal":
        return MilpSolution(status, None, None)
    return MilpSolution("optimal", float(res.fun) + spec.objective_constant, res.x)


# -- column generation ----------------------------------------------------------------


@dataclass
class CgReport:
    """Per-run diagnostics of the column-generation loop."""

    iterations: int = 0
    columns: list[int] = field(default_factory=list)
    reduced_costs: list[float] = field(default_factory=list)
    master_objectives: list[float] = field(default_factory=list)
    wall_ms: float = 0.0
    status: str = "optimal"
    artificial_mass: float = 0.0


@dataclass
class CgOutcome:
    value: float | None
    status: str
    report: CgReport


def column_generation(
    cs: ConstraintSystem,
    gamma: BitPolynomial,
    sense: str = "min",
    *,
    eps: float = DEFAULT_EPS,
    max_iter: int = DEFAULT_MAX_ITER,
    big_m: float = DEFAULT_BIG_M,
    phase_one: bool = False,
    time_limit: float | None = None,
    pricing: Callable[[ConstraintSystem, BitPolynomial, np.ndarray, str], int] | None = None,
) -> CgOutcome:
    """Bound one side of the query by master/pricing iterations.

    The master starts as the artificial identity basis under the big-M
    penalty and is re-solved warm after each new column.  Pricing solves the
    reduced-cost integer program; its answer is re-evaluated exactly and the
    loop stops once no column prices below -eps.  Constant objectives
    short-circuit without any iteration.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    start = time.perf_counter()
    deadline = start + time_limit if time_limit else None
    report = CgReport()
    if gamma.is_constant:
        report.wall_ms = 1e3 * (time.perf_counter() - start)
        return CgOutcome(gamma.constant_value, "optimal", report)
    sign = 1.0 if sense == "min" else -1.0
    m = cs.n_rows
    b = cs.rhs
    # Master layout: artificial identity first, generated columns appended
    # after it.  The artificial basis is feasible because b >= 0, and every
    # warm basis stays valid as columns are only ever added.
    A = np.eye(m)
    column_costs: list[float] = []
    basis = list(range(m))
    seen: dict[int, int] = {}
    budget = max_iter
    zero_gamma = BitPolynomial([], cs.encoding)

    def price(current_gamma: BitPolynomial, duals: np.ndarray) -> int:
        if pricing is not None:
            return pricing(cs, current_gamma, duals, sense)
        pspec = build_pricing_milp(cs, current_gamma, duals, sense)
        remaining = None if deadline is None else max(deadline - time.perf_counter(), 0.01)
        psol = solve_milp(pspec, time_limit=remaining)
        if psol.status == "time_limit":
            raise TimeLimitExceeded("pricing hit the wall-clock limit")
        if psol.status != "optimal":
            raise SolverError(f"pricing solver returned {psol.status}")
        return decode_pricing_bits(cs, pspec, psol.x)

    def run_stage(art_cost: float, allowed: np.ndarray | None, stage_gamma: BitPolynomial,
                  stop_at_zero: bool) -> tuple[str, float | None, np.ndarray | None]:
        """One master/pricing loop; returns (status, master objective, x)."""
        nonlocal A, basis, budget
        stage_sign = sign if stage_gamma is gamma else 1.0
        while budget > 0:
            if deadline is not None and time.perf_counter() > deadline:
                return "time_limit", None, None
            costs = np.concatenate([np.full(m, art_cost), np.array(column_costs)]) if (
                stage_gamma is gamma
            ) else np.concatenate([np.full(m, art_cost), np.zeros(len(column_costs))])
            mask = None
            if allowed is not None:
                mask = np.concatenate([allowed, np.ones(len(column_costs), dtype=bool)])
            m_status, x, duals, _ = _simplex_core(A, b, costs, basis, tol=eps,
                                                  allowed=mask, deadline=deadline)
            if m_status != "optimal":
                return m_status, None, None
            master_objective = float(costs @ x)
            if stage_gamma is gamma:
                report.master_objectives.append(master_objective)
            if stop_at_zero and master_objective <= ARTIFICIAL_TOL:
                return "optimal", master_objective, x
            budget -= 1
            u = price(stage_gamma, duals)
            column = cs.column(u)
            reduced = stage_sign * stage_gamma.evaluate(u) - float(duals @ column)
            report.iterations += 1
            report.reduced_costs.append(reduced)
            if reduced >= -eps:
                return "optimal", master_objective, x
            if u in seen:
                raise DuplicateColumnError(
                    f"pricing returned column u={u} twice (reduced cost {reduced:.3e}); "
                    "this indicates a dual or tolerance bug"
                )
            seen[u] = A.shape[1]
            report.columns.append(u)
            A = np.column_stack([A, column])
            column_costs.append(sign * gamma.evaluate(u))
        return "max_iter", None, None

    status = "max_iter"
    value: float | None = None
    try:
        if phase_one:
            # phase 1: drive the artificial mass to zero, pricing on -d.a
            p_status, p_obj, _ = run_stage(1.0, None, zero_gamma, stop_at_zero=True)
            if p_status == "optimal" and p_obj is not None and p_obj > ARTIFICIAL_TOL:
                status = "infeasible"
            elif p_status != "optimal":
                status = p_status
            else:
                # artificials blocked from re-entering and still penalized in
                # case a degenerate pivot re-inflates a basic one
                blocked = np.zeros(m, dtype=bool)
                status, objective, x = run_stage(big_m, blocked, gamma, stop_at_zero=False)
        else:
            status, objective, x = run_stage(big_m, None, gamma, stop_at_zero=False)
        if status == "optimal":
            artificial = float(x[:m].sum())
            report.artificial_mass = artificial
            if artificial > ARTIFICIAL_TOL:
                status = "infeasible"
            else:
                # objective of the generated columns alone, penalty-free
                value = sign * float(np.dot(column_costs, x[m:]))
    except TimeLimitExceeded:
        status = "time_limit"
    if status in ("max_iter", "time_limit") and report.master_objectives:
        value = sign * report.master_objectives[-1]  # best bound so far, not converged
    report.status = status
    report.wall_ms = 1e3 * (time.perf_counter() - start)
    return CgOutcome(value, status, report)


# -- bound dispatcher -------------------------------------------------------------------


@dataclass
class BoundResult:
    """Lower/upper bounds on an interventional query plus run diagnostics."""

    lower: float | None
    upper: float | None
    method: str
    status: str
    identified: bool = False
    diagnostics: dict = field(default_factory=dict)


METHODS = ("direct-lp", "cg", "single-milp", "auto")


def bound(
    g: CausalGraph,
    d: EmpiricalDistribution,
    *,
    target: Mapping[str, int] | None = None,
    intervention: Mapping[str, int] | None = None,
    kind: str = "probability",
    treatment: str | None = None,
    method: str = "auto",
    direction: str = "both",
    eps: float = DEFAULT_EPS,
    max_iter: int = DEFAULT_MAX_ITER,
    column_limit: int | None = None,
    binary_limit: int | None = None,
    big_m: float = DEFAULT_BIG_M,
    phase_one: bool = False,
    time_limit: float | None = None,
) -> BoundResult:
    """Tight bounds on Pr(target | do(intervention)) or on a treatment effect.

    `auto` enumerates the direct LP when the canonical cardinality fits the
    column limit and falls back to column generation beyond it.  Identified
    queries (constant objective) bypass every solver.
    """
    from .lpform import DEFAULT_BINARY_LIMIT, DEFAULT_COLUMN_LIMIT

    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    if direction not in ("lower", "upper", "both"):
        raise ValueError("direction must be lower, upper or both")
    column_limit = DEFAULT_COLUMN_LIMIT if column_limit is None else column_limit
    binary_limit = DEFAULT_BINARY_LIMIT if binary_limit is None else binary_limit

    if kind == "probability":
        if not target or intervention is None:
            raise ValueError("probability queries need target and intervention")
        gamma, trace = build_objective(g, d, target, intervention)
        traces = [trace]
    elif kind == "ate":
        if not target or not treatment:
            raise ValueError("treatment-effect queries need target and treatment")
        gamma1, trace1 = build_objective(g, d, target, {treatment: 1})
        gamma0, trace0 = build_objective(g, d, target, {treatment: 0})
        gamma = combine_linear([(1.0, gamma1), (-1.0, gamma0)])
        traces = [trace1, trace0]
    else:
        raise ValueError(f"unknown query kind {kind!r}")

    diagnostics: dict = {"traces": traces}
    if gamma.is_constant:
        value = gamma.constant_value
        return BoundResult(value, value, "identified", "optimal", True, diagnostics)

    cs = build_constraints(g, d, gamma.encoding.component)
    if cs.encoding != gamma.encoding:
        raise SolverError("constraint system and objective disagree on the encoding")
    chosen = method
    if method == "auto":
        chosen = "direct-lp" if cs.encoding.cardinality <= column_limit else "cg"
    diagnostics["rows"] = cs.n_rows
    diagnostics["cardinality"] = cs.encoding.cardinality

    senses = {"lower": ("min",), "upper": ("max",), "both": ("min", "max")}[direction]
    values: dict[str, float | None] = {"min": None, "max": None}
    statuses: list[str] = []
    for sense in senses:
        side = "lower" if sense == "min" else "upper"
        if chosen == "direct-lp":
            spec = build_direct_lp(cs, gamma, sense, column_limit=column_limit)
            sol = solve_lp(spec, tol=eps, big_m=big_m, phase_one=phase_one, time_limit=time_limit)
            statuses.append(sol.status)
            values[sense] = sol.objective
            diagnostics[side] = {"iterations": sol.iterations, "status": sol.status}
        elif chosen == "cg":
            out = column_generation(
                cs,
                gamma,
                sense,
                eps=eps,
                max_iter=max_iter,
                big_m=big_m,
                phase_one=phase_one,
                time_limit=time_limit,
            )
            statuses.append(out.status)
            values[sense] = out.value
            diagnostics[side] = out.report
        else:
            spec = build_single_milp(cs, gamma, sense, binary_limit=binary_limit)
            msol = solve_milp(spec, time_limit=time_limit)
            statuses.append(msol.status)
            if msol.status == "optimal":
                sign = 1.0 if sense == "min" else -1.0
                values[sense] = sign * msol.objective
                diagnostics[side] = {
                    "status": msol.status,
                    "columns": decode_single_milp(cs, spec, msol.x),
                }
            else:
                diagnostics[side] = {"status": msol.status}

    if any(s == "infeasible" for s in statuses):
        overall = "infeasible"
    elif all(s == "optimal" for s in statuses):
        overall = "optimal"
    else:
        overall = next(s for s in statuses if s != "optimal")
    lower, upper = values["min"], values["max"]
    if (
        overall == "optimal"
        and lower is not None
        and upper is not None
        and lower > upper + 1e-9
    ):
        raise SolverError(f"bound inversion: lower {lower} > upper {upper}")
    return BoundResult(lower, upper, chosen, overall, False, diagnostics)
