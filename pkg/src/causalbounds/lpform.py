"""Assembly of the optimization programs.

The feasible set is the polytope of exogenous tables p >= 0 satisfying, for
every configuration w of the intervened component's extended variable set,

    sum_u p_u * a_{u,w} = qhat_w,

where a_{u,w} multiplies the mechanism-output indicators of the component's
members and qhat_w is the product of their empirical conditionals.  An
explicit normalization row sum_u p_u = 1 is appended (implied by the others,
kept for a stable identity basis on degenerate instances).

Three programs are built on top: the direct LP enumerating every column, the
pricing integer program minimizing the reduced cost of one symbolic column,
and a single monolithic integer program that finds one column per row plus
its weight.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from itertools import product

import numpy as np
import scipy.sparse as sp

from .canon import BitEncoding, BitLiteral, symbolic_column_entry
from .dist import EmpiricalDistribution
from .errors import SizeLimitError
from .graph import CausalGraph, CComponent
from .objective import BitPolynomial

DEFAULT_COLUMN_LIMIT = 1 << 22
DEFAULT_BINARY_LIMIT = 1 << 14


class FormulationError(ValueError):
    """Inconsistent inputs to a program builder."""


class ConstraintSystem:
    """Rows of the mechanism-matching constraints for one component.

    Row r < 2^|W*| corresponds to the configuration of the extended set W*
    whose bits (lexicographic variable order, last variable least
    significant) spell r; the final row is the normalization.
    """

    def __init__(self, g: CausalGraph, d: EmpiricalDistribution, component: CComponent):
        self.component = component
        self.encoding = BitEncoding(g, component)
        self.wstar = tuple(sorted(component.w_c))
        self.n_config_rows = 1 << len(self.wstar)
        self.n_rows = self.n_config_rows + 1
        rhs = np.zeros(self.n_rows)
        zero_rows: list[int] = []
        # cache: per row, the (shift, wanted-bit) pairs of the member literals
        self._row_bits: list[tuple[tuple[int, int], ...]] = []
        for r in range(self.n_config_rows):
            w = self.row_assignment(r)
            value = 1.0
            flagged = False
            for member in component.members:
                given = {v: w[v] for v in component.w_v[member]}
                p, flag = d.conditional({member: w[member]}, given, with_flag=True)
                value *= p
                flagged = flagged or flag
            rhs[r] = value
            if flagged:
                zero_rows.append(r)
            l_plus, l_minus = symbolic_column_entry(self.encoding, w)
            self._row_bits.append(
                tuple(
                    (self.encoding.shift_of(lit), 1 if lit.positive else 0)
                    for lit in l_plus + l_minus
                )
            )
        rhs[self.n_config_rows] = 1.0
        self.rhs = rhs
        self.zero_rows = tuple(zero_rows)

    def row_assignment(self, r: int) -> dict[str, int]:
        if not 0 <= r < self.n_config_rows:
            raise FormulationError(f"row {r} out of range")
        n = len(self.wstar)
        return {v: (r >> (n - 1 - i)) & 1 for i, v in enumerate(self.wstar)}

    def row_literals(self, r: int) -> tuple[tuple[BitLiteral, ...], tuple[BitLiteral, ...]]:
        return symbolic_column_entry(self.encoding, self.row_assignment(r))

    def column(self, u: int) -> np.ndarray:
        """Full column for exogenous value u, normalization entry included."""
        col = np.empty(self.n_rows)
        for r, bits in enumerate(self._row_bits):
            col[r] = 1.0
            for shift, want in bits:
                if (u >> shift) & 1 != want:
                    col[r] = 0.0
                    break
        col[self.n_config_rows] = 1.0
        return col

    def columns_many(self, us: np.ndarray) -> np.ndarray:
        """Matrix of columns for an array of exogenous values (rows x len(us))."""
        us = np.asarray(us, dtype=np.uint64)
        out = np.ones((self.n_rows, us.size))
        for r, bits in enumerate(self._row_bits):
            hit = np.ones(us.size, dtype=bool)
            for shift, want in bits:
                hit &= ((us >> np.uint64(shift)) & np.uint64(1)) == want
            out[r] = hit
        return out


def build_constraints(
    g: CausalGraph, d: EmpiricalDistribution, component: CComponent
) -> ConstraintSystem:
    """Constraint rows and right-hand sides for the intervened component."""
    return ConstraintSystem(g, d, component)


@dataclass(frozen=True)
class LinearProgramSpec:
    """A fully materialized LP: min/max c.x s.t. A x = b, x >= 0."""

    objective: np.ndarray
    columns: np.ndarray  # (n_rows, n_cols), entries in {0, 1} plus the normalization row
    rhs: np.ndarray
    sense: str
    u_indices: np.ndarray

    def __post_init__(self):
        if self.sense not in ("min", "max"):
            raise FormulationError(f"unknown sense {self.sense!r}")
        if self.columns.shape != (self.rhs.size, self.objective.size):
            raise FormulationError("LP dimensions disagree")

    @property
    def n_rows(self) -> int:
        return self.rhs.size

    @property
    def n_cols(self) -> int:
        return self.objective.size


def build_direct_lp(
    cs: ConstraintSystem,
    gamma: BitPolynomial,
    sense: str,
    *,
    column_limit: int = DEFAULT_COLUMN_LIMIT,
) -> LinearProgramSpec:
    """One column per exogenous value; refuses beyond the enumeration limit."""
    card = cs.encoding.cardinality
    if card > column_limit:
        raise SizeLimitError(
            f"direct LP would need {card} columns (limit {column_limit}); "
            "use column generation or the single integer program"
        )
    us = cs.encoding.all_values()
    columns = cs.columns_many(us)
    objective = gamma.evaluate_many(us) if not gamma.is_constant else np.full(
        card, gamma.constant_value
    )
    return LinearProgramSpec(
        objective=objective, columns=columns, rhs=cs.rhs.copy(), sense=sense, u_indices=us
    )


# -- integer programs ------------------------------------------------------------


@dataclass
class IntegerProgramSpec:
    """A mixed 0/1 integer program in inequality/equality list form.

    Variables are addressed by name; `binary` marks integrality.  The
    objective is always stored for minimization (`sense` records the caller's
    original direction, already folded into the coefficients).
    """

    sense: str
    names: list[str] = field(default_factory=list)
    binary: list[bool] = field(default_factory=list)
    lower: list[float] = field(default_factory=list)
    upper: list[float] = field(default_factory=list)
    objective: dict[int, float] = field(default_factory=dict)
    objective_constant: float = 0.0
    rows: list[tuple[dict[int, float], float, float]] = field(default_factory=list)
    _index: dict[str, int] = field(default_factory=dict)

    def add_var(self, name: str, *, binary: bool = False, lb: float = 0.0, ub: float = 1.0) -> int:
        if name in self._index:
            raise FormulationError(f"duplicate variable {name!r}")
        self._index[name] = len(self.names)
        self.names.append(name)
        self.binary.append(binary)
        self.lower.append(lb)
        self.upper.append(ub)
        return self._index[name]

    def var(self, name: str) -> int:
        return self._index[name]

    def add_row(self, coeffs: Mapping[int, float], lo: float, hi: float) -> None:
        self.rows.append((dict(coeffs), lo, hi))

    def add_objective(self, var: int, coeff: float) -> None:
        self.objective[var] = self.objective.get(var, 0.0) + coeff

    @property
    def n_vars(self) -> int:
        return len(self.names)

    @property
    def n_binary(self) -> int:
        return sum(self.binary)

    def constraint_matrix(self) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
        data, ri, ci = [], [], []
        lo = np.empty(len(self.rows))
        hi = np.empty(len(self.rows))
        for r, (coeffs, l, h) in enumerate(self.rows):
            lo[r], hi[r] = l, h
            for c, v in coeffs.items():
                ri.append(r)
                ci.append(c)
                data.append(v)
        mat = sp.csr_matrix((data, (ri, ci)), shape=(len(self.rows), self.n_vars))
        return mat, lo, hi

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(self.n_vars)
        for var, coeff in self.objective.items():
            c[var] = coeff
        return c


def _add_product_var(
    spec: IntegerProgramSpec,
    name: str,
    literals: Sequence[BitLiteral],
    bit_var: Mapping[tuple[int, int], int],
) -> int:
    """Fresh variable pinned to a product of literals by |literals|+1 linear rows."""
    v = spec.add_var(name, lb=0.0, ub=1.0)
    lower_row: dict[int, float] = {v: 1.0}
    lower_rhs = 1.0 - len(literals)
    for lit in literals:
        b = bit_var[(lit.block, lit.offset)]
        if lit.positive:
            spec.add_row({v: 1.0, b: -1.0}, -np.inf, 0.0)  # v <= bit
            lower_row[b] = lower_row.get(b, 0.0) - 1.0
        else:
            spec.add_row({v: 1.0, b: 1.0}, -np.inf, 1.0)  # v <= 1 - bit
            lower_row[b] = lower_row.get(b, 0.0) + 1.0
            lower_rhs += 1.0
    spec.add_row(lower_row, lower_rhs, np.inf)  # v >= 1 - k + sum of literal values
    return v


def _signed_gamma(gamma: BitPolynomial, sense: str) -> list[tuple[float, tuple[BitLiteral, ...]]]:
    sign = 1.0 if sense == "min" else -1.0
    return [(sign * t.coefficient, t.literals) for t in gamma.merged().terms]


def build_pricing_milp(
    cs: ConstraintSystem,
    gamma: BitPolynomial,
    duals: np.ndarray,
    sense: str,
) -> IntegerProgramSpec:
    """Integer program minimizing the reduced cost over the bits of one column.

    Duals are indexed per constraint row, normalization row last.  For upper
    bounds (`sense == 'max'`) the objective polynomial enters negated, which
    matches a master that minimizes the negated objective.
    """
    duals = np.asarray(duals, dtype=float)
    if duals.shape != (cs.n_rows,):
        raise FormulationError(f"expected {cs.n_rows} duals, got {duals.shape}")
    enc = cs.encoding
    spec = IntegerProgramSpec(sense="min")
    bit_var: dict[tuple[int, int], int] = {}
    for bi, block in enumerate(enc.blocks):
        for off in range(block.width):
            bit_var[(bi, off)] = spec.add_var(f"b{bi}_{off}", binary=True)
    # column entries: a_r = product of the row's member literals
    for r in range(cs.n_config_rows):
        l_plus, l_minus = cs.row_literals(r)
        a = _add_product_var(spec, f"a{r}", tuple(l_plus) + tuple(l_minus), bit_var)
        if duals[r] != 0.0:
            spec.add_objective(a, -float(duals[r]))
    # the normalization entry is identically one
    spec.objective_constant -= float(duals[cs.n_config_rows])
    # objective polynomial over the same bits
    for t, (coeff, literals) in enumerate(_signed_gamma(gamma, sense)):
        if not literals:
            spec.objective_constant += coeff
        elif len(literals) == 1:
            lit = literals[0]
            b = bit_var[(lit.block, lit.offset)]
            if lit.positive:
                spec.add_objective(b, coeff)
            else:
                spec.objective_constant += coeff
                spec.add_objective(b, -coeff)
        else:
            beta = _add_product_var(spec, f"beta{t}", literals, bit_var)
            spec.add_objective(beta, coeff)
    return spec


def decode_pricing_bits(cs: ConstraintSystem, spec: IntegerProgramSpec, x: np.ndarray) -> int:
    """Recover the exogenous value from a pricing solution's bit variables."""
    enc = cs.encoding
    u = 0
    for bi, block in enumerate(enc.blocks):
        for off in range(block.width):
            bit = int(round(float(x[spec.var(f"b{bi}_{off}")])))
            u |= bit << enc.shift_of(BitLiteral(bi, off, True))
    return u


def build_single_milp(
    cs: ConstraintSystem,
    gamma: BitPolynomial,
    sense: str,
    *,
    binary_limit: int = DEFAULT_BINARY_LIMIT,
) -> IntegerProgramSpec:
    """One integer program over R = rows copies of the bits plus their weights.

    Copy k carries its own bit string (a candidate column) and a weight p_k;
    bilinear products entry*weight and gamma-term*weight are replaced by fresh
    variables with envelope rows that are exact for 0/1 factors.  Feasible
    bases need at most one column per row, so R copies suffice.
    """
    enc = cs.encoding
    n_copies = cs.n_rows
    total_binaries = n_copies * enc.total_bits
    if total_binaries > binary_limit:
        raise SizeLimitError(
            f"single integer program would need {total_binaries} binary variables "
            f"(limit {binary_limit})"
        )
    spec = IntegerProgramSpec(sense="min")
    gamma_terms = _signed_gamma(gamma, sense)
    row_balance: list[dict[int, float]] = [dict() for _ in range(cs.n_config_rows)]
    norm_row: dict[int, float] = {}
    for k in range(n_copies):
        bit_var: dict[tuple[int, int], int] = {}
        for bi, block in enumerate(enc.blocks):
            for off in range(block.width):
                bit_var[(bi, off)] = spec.add_var(f"b{bi}_{off}@{k}", binary=True)
        p = spec.add_var(f"p@{k}", lb=0.0, ub=1.0)
        norm_row[p] = 1.0
        for r in range(cs.n_config_rows):
            l_plus, l_minus = cs.row_literals(r)
            a = _add_product_var(spec, f"a{r}@{k}", tuple(l_plus) + tuple(l_minus), bit_var)
            alpha = spec.add_var(f"alpha{r}@{k}", lb=0.0, ub=1.0)
            # alpha = a * p: exact once a is integral
            spec.add_row({alpha: 1.0, a: -1.0}, -np.inf, 0.0)
            spec.add_row({alpha: 1.0, p: -1.0}, -np.inf, 0.0)
            spec.add_row({alpha: 1.0, p: -1.0, a: -1.0}, -1.0, np.inf)
            row_balance[r][alpha] = 1.0
        for t, (coeff, literals) in enumerate(gamma_terms):
            if coeff == 0.0:
                continue
            if not literals:
                spec.add_objective(p, coeff)
                continue
            m = _add_product_var(spec, f"g{t}@{k}", literals, bit_var)
            theta = spec.add_var(f"gp{t}@{k}", lb=0.0, ub=1.0)
            spec.add_row({theta: 1.0, m: -1.0}, -np.inf, 0.0)
            spec.add_row({theta: 1.0, p: -1.0}, -np.inf, 0.0)
            spec.add_row({theta: 1.0, p: -1.0, m: -1.0}, -1.0, np.inf)
            spec.add_objective(theta, coeff)
    for r in range(cs.n_config_rows):
        spec.add_row(row_balance[r], float(cs.rhs[r]), float(cs.rhs[r]))
    spec.add_row(norm_row, 1.0, 1.0)
    return spec


def decode_single_milp(
    cs: ConstraintSystem, spec: IntegerProgramSpec, x: np.ndarray
) -> list[tuple[int, float]]:
    """(exogenous value, weight) pairs of the copies in a monolithic solution."""
    enc = cs.encoding
    out = []
    for k in range(cs.n_rows):
        u = 0
        for bi, block in enumerate(enc.blocks):
            for off in range(block.width):
                bit = int(round(float(x[spec.var(f"b{bi}_{off}@{k}")])))
                u |= bit << enc.shift_of(BitLiteral(bi, off, True))
        out.append((u, float(x[spec.var(f"p@{k}")])))
    return out


# -- diagnostics ------------------------------------------------------------------


def lp_format(spec: LinearProgramSpec | IntegerProgramSpec, name: str = "program") -> str:
    """Serialize a program to LP-format text (diagnostic dump)."""
    lines = [f"\\ {name}"]
    if isinstance(spec, LinearProgramSpec):
        lines.append("Minimize" if spec.sense == "min" else "Maximize")
        terms = " + ".join(f"{spec.objective[j]:.12g} x{j}" for j in range(spec.n_cols))
        lines.append(" obj: " + (terms or "0"))
        lines.append("Subject To")
        for r in range(spec.n_rows):
            nz = np.nonzero(spec.columns[r])[0]
            body = " + ".join(f"{spec.columns[r, j]:.12g} x{j}" for j in nz) or "0 x0"
            lines.append(f" r{r}: {body} = {spec.rhs[r]:.12g}")
        lines.append("Bounds")
        lines.extend(f" 0 <= x{j}" for j in range(spec.n_cols))
        lines.append("End")
        return "\n".join(lines)
    lines.append("Minimize")
    body = " + ".join(
        f"{coeff:.12g} {spec.names[v]}" for v, coeff in sorted(spec.objective.items())
    )
    lines.append(" obj: " + (body or "0"))
    lines.append("Subject To")
    for r, (coeffs, lo, hi) in enumerate(spec.rows):
        expr = " + ".join(f"{v:.12g} {spec.names[c]}" for c, v in sorted(coeffs.items()))
        if lo == hi:
            lines.append(f" r{r}: {expr} = {lo:.12g}")
        else:
            if np.isfinite(hi):
                lines.append(f" r{r}a: {expr} <= {hi:.12g}")
            if np.isfinite(lo):
                lines.append(f" r{r}b: {expr} >= {lo:.12g}")
    lines.append("Bounds")
    for j, nm in enumerate(spec.names):
        lines.append(f" {spec.lower[j]:.12g} <= {nm} <= {spec.upper[j]:.12g}")
    lines.append("Binaries")
    lines.append(" " + " ".join(nm for j, nm in enumerate(spec.names) if spec.binary[j]))
    lines.append("End")
    return "\n".join(lines)
