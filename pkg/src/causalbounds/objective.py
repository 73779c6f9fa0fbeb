"""Objective construction for interventional queries.

Walks the target set in reverse topological order, emitting one symbolic
equation per step, and collects the result into a polynomial over the bits of
the intervened component's canonical exogenous variable: gamma(u) is the
coefficient of Pr(U*=u) in the linear objective, i.e. Pr(targets | do(x),
U*=u).

Four cases drive the walk:

  C1a  the selected variable is the carried exogenous variable,
  C1b  an endogenous variable that does not descend from the intervention,
  C2   a descendant of the intervention inside its confounded component,
  C3   a descendant of the intervention in a different component.

C2 consumes a mechanism and contributes one bit literal per parent context;
C1b/C3 contribute conditional probabilities of the input distribution; C1a
terminates the exogenous chain.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .canon import BitEncoding, BitLiteral
from .dist import EmpiricalDistribution
from .graph import (
    CausalGraph,
    CComponent,
    GraphError,
    ancestral_prune,
    c_components,
    d_separated,
    find_c3_separator,
)

MERGE_TOL = 1e-15


class UnsupportedQueryError(ValueError):
    """Query shape outside the supported fragment (see message for details)."""


@dataclass(frozen=True)
class Term:
    coefficient: float
    literals: tuple[BitLiteral, ...]

    def degree(self) -> int:
        return len(self.literals)


class BitPolynomial:
    """Sum of (coefficient x product of bit literals) over one encoding.

    Literals within a term are sorted by position and never repeat a bit.
    `encoding` may be None only for structurally constant polynomials.
    """

    def __init__(self, terms: Sequence[Term], encoding: BitEncoding | None):
        for term in terms:
            positions = [(lit.block, lit.offset) for lit in term.literals]
            if len(set(positions)) != len(positions):
                raise ValueError("term carries two literals on the same bit position")
        self.terms = tuple(
            Term(t.coefficient, tuple(sorted(t.literals, key=lambda l: (l.block, l.offset))))
            for t in terms
        )
        self.encoding = encoding
        if encoding is None and any(t.literals for t in self.terms):
            raise ValueError("non-constant polynomial requires an encoding")

    @property
    def is_constant(self) -> bool:
        return all(not t.literals for t in self.terms)

    @property
    def constant_value(self) -> float:
        if not self.is_constant:
            raise ValueError("polynomial is not constant")
        return float(sum(t.coefficient for t in self.terms))

    def max_degree(self) -> int:
        return max((t.degree() for t in self.terms), default=0)

    def merged(self, tol: float = MERGE_TOL) -> "BitPolynomial":
        """Merge identical literal sets and drop negligible coefficients."""
        acc: dict[tuple[BitLiteral, ...], float] = {}
        for term in self.terms:
            acc[term.literals] = acc.get(term.literals, 0.0) + term.coefficient
        kept = [Term(c, lits) for lits, c in acc.items() if abs(c) > tol]
        kept.sort(key=lambda t: tuple((l.block, l.offset, not l.positive) for l in t.literals))
        return BitPolynomial(kept, self.encoding)

    def evaluate(self, u: int) -> float:
        enc = self.encoding
        total = 0.0
        for term in self.terms:
            value = term.coefficient
            for lit in term.literals:
                if enc.literal_value(u, lit) == 0:
                    value = 0.0
                    break
            total += value
        return total

    def evaluate_many(self, us: np.ndarray) -> np.ndarray:
        """Vectorized evaluation over an array of exogenous values."""
        us = np.asarray(us, dtype=np.uint64)
        out = np.zeros(us.shape, dtype=float)
        enc = self.encoding
        for term in self.terms:
            factor = np.full(us.shape, term.coefficient)
            for lit in term.literals:
                bits = (us >> np.uint64(enc.shift_of(lit))) & np.uint64(1)
                wanted = bits if lit.positive else (1 - bits)
                factor = factor * wanted
            out += factor
        return out

    def scaled(self, weight: float) -> "BitPolynomial":
        return BitPolynomial([Term(weight * t.coefficient, t.literals) for t in self.terms], self.encoding)

    def canonical_terms(self) -> list[tuple[float, tuple[tuple[int, int, bool], ...]]]:
        """Stable structural form used by tests: sorted (coeff, literal keys)."""
        rows = [
            (t.coefficient, tuple((l.block, l.offset, l.positive) for l in t.literals))
            for t in self.merged().terms
        ]
        rows.sort(key=lambda r: (r[1], r[0]))
        return rows

    def __len__(self) -> int:
        return len(self.terms)

    def __repr__(self) -> str:
        return f"BitPolynomial({len(self.terms)} terms, degree {self.max_degree()})"


def eval_gamma(p: BitPolynomial, u: int) -> float:
    """Objective coefficient of Pr(U*=u): substitute u's bits and sum."""
    return p.evaluate(u)


def combine_linear(queries: Sequence[tuple[float, BitPolynomial]]) -> BitPolynomial:
    """Weighted sum of polynomials sharing one encoding (e.g. treatment effects)."""
    if not queries:
        raise ValueError("no polynomials to combine")
    encodings = [p.encoding for _, p in queries if p.encoding is not None]
    for enc in encodings[1:]:
        if enc != encodings[0]:
            raise UnsupportedQueryError("polynomials use different bit encodings")
    encoding = encodings[0] if encodings else None
    terms: list[Term] = []
    for weight, poly in queries:
        terms.extend(Term(weight * t.coefficient, t.literals) for t in poly.terms)
    return BitPolynomial(terms, encoding).merged()


# -- derivation ---------------------------------------------------------------


@dataclass(frozen=True)
class TraceStep:
    index: int
    selected: str
    case: str
    targets: tuple[str, ...]
    next_targets: tuple[str, ...]
    equation: str
    z_t: tuple[str, ...] = ()
    w_t: tuple[str, ...] = ()
    s_t: tuple[str, ...] = ()


@dataclass(frozen=True)
class DerivationTrace:
    """Record of the case walk, serializable to a human-readable listing."""

    target: tuple[tuple[str, int], ...]
    intervention: tuple[tuple[str, int], ...]
    steps: tuple[TraceStep, ...]
    pruned_away: tuple[str, ...]
    component_members: tuple[str, ...]
    identified: bool

    def render(self) -> str:
        header = [
            "query: Pr(%s | do(%s))"
            % (
                ", ".join(f"{v}={x}" for v, x in self.target),
                ", ".join(f"{v}={x}" for v, x in self.intervention) or "-",
            )
        ]
        if self.pruned_away:
            header.append("pruned (outside ancestral closure): " + ", ".join(self.pruned_away))
        header.append(
            "intervened component: {%s}" % ", ".join(self.component_members)
            if self.component_members
            else "intervened component: none (query identified)"
        )
        lines = [f"  step {s.index} [{s.case}] select {s.selected}: {s.equation}" for s in self.steps]
        return "\n".join(header + lines)


@dataclass
class _Derivation:
    graph: CausalGraph
    component: CComponent | None
    encoding: BitEncoding | None
    effective_x: tuple[str, ...]
    steps: list[TraceStep] = field(default_factory=list)
    pruned_away: tuple[str, ...] = ()


def _targets_label(names: Sequence[str]) -> str:
    return ", ".join(names) if names else "{}"


def _tail(next_targets: Sequence[str]) -> str:
    return f" * Pr({_targets_label(sorted(next_targets))} | do)" if next_targets else ""


def _sum_prefix(z_t: Sequence[str]) -> str:
    return f"sum_{{{_targets_label(sorted(z_t))}}} " if z_t else ""


def derive(
    g: CausalGraph,
    target_vars: Sequence[str],
    intervened_vars: Sequence[str],
) -> _Derivation:
    """Graphical pass: select variables, pick cases, find separators.

    Needs no distribution; values enter only in the numeric replay.
    """
    g.require_quasi_markovian()
    targets = tuple(dict.fromkeys(target_vars))
    for v in targets:
        if v not in g:
            raise GraphError(f"unknown target {v!r}")
        if not g.is_endogenous(v):
            raise UnsupportedQueryError(f"target {v!r} is exogenous; queries range over endogenous variables")
    for v in intervened_vars:
        if v not in g:
            raise GraphError(f"unknown intervened node {v!r}")
        if not g.is_endogenous(v):
            raise UnsupportedQueryError(f"intervened node {v!r} is exogenous")
    if set(targets) & set(intervened_vars):
        raise UnsupportedQueryError("target and intervention sets overlap")

    # Variables outside the ancestral closure of the targets cannot influence
    # the query; interventions among them are dropped outright.
    target_closure = g.ancestral_closure(targets)
    effective_x = tuple(v for v in intervened_vars if v in target_closure)
    pruned = ancestral_prune(g, set(targets) | set(effective_x))
    pruned_away = tuple(n for n in g.nodes if n not in pruned)

    component = None
    encoding = None
    ustar = None
    if effective_x:
        holders = [c for c in c_components(pruned) if c.member_set & set(effective_x)]
        if len(holders) > 1:
            raise UnsupportedQueryError(
                "interventions span several confounded components; only a single "
                "intervened component is supported"
            )
        component = holders[0]
        ustar = component.exogenous
        if ustar is not None:
            encoding = BitEncoding(pruned, component)

    deriv = _Derivation(
        graph=pruned,
        component=component,
        encoding=encoding,
        effective_x=effective_x,
        pruned_away=pruned_away,
    )

    desc_x = pruned.descendants(effective_x) if effective_x else frozenset()
    live: set[str] = set(targets)
    index = 0
    while live:
        maximal = [v for v in live if not (pruned.descendants([v]) & live)]
        pool = [v for v in maximal if v in desc_x] or maximal
        sel = max(pool, key=pruned.topo_index)
        live_sorted = tuple(sorted(live))
        if not pruned.is_endogenous(sel):
            if sel != ustar:
                raise GraphError(f"unexpected exogenous variable {sel!r} in the target walk")
            nxt = live - {sel}
            eq = f"Pr({_targets_label(live_sorted)} | do) = Pr({sel}){_tail(tuple(nxt))}"
            deriv.steps.append(TraceStep(index, sel, "C1a", live_sorted, tuple(sorted(nxt)), eq))
        elif sel not in desc_x:
            nxt = live - {sel}
            cond_endo = tuple(sorted(v for v in nxt if pruned.is_endogenous(v)))
            if ustar in nxt and not d_separated(pruned, {sel}, {ustar}, cond_endo):
                raise UnsupportedQueryError(
                    f"cannot eliminate the carried exogenous variable from the "
                    f"conditioning set of {sel!r}; this query shape is unsupported"
                )
            eq = "Pr(%s | do) = P^(%s | %s)%s" % (
                _targets_label(live_sorted),
                sel,
                _targets_label(cond_endo),
                _tail(tuple(nxt)),
            )
            deriv.steps.append(TraceStep(index, sel, "C1b", live_sorted, tuple(sorted(nxt)), eq))
        elif sel in component:
            parents = set(pruned.parents(sel))
            z_t = parents - live - set(effective_x)
            nxt = (live | z_t) - {sel}
            eq = "Pr(%s | do) = %s[f_%s(parents)=%s]%s" % (
                _targets_label(live_sorted),
                _sum_prefix(tuple(z_t)),
                sel,
                sel.lower(),
                _tail(tuple(nxt)),
            )
            deriv.steps.append(
                TraceStep(index, sel, "C2", live_sorted, tuple(sorted(nxt)), eq, z_t=tuple(sorted(z_t)))
            )
        else:
            carried = live - {sel}
            w_t = find_c3_separator(pruned, sel, effective_x, carried)
            s_t = tuple(
                sorted(v for v in (w_t | carried) - {sel} if pruned.is_endogenous(v))
            )
            z_t = w_t - live
            nxt = (live | z_t) - {sel}
            given = ", ".join(n for n in (list(effective_x) + list(s_t)))
            eq = "Pr(%s | do) = %sP^(%s | %s)%s" % (
                _targets_label(live_sorted),
                _sum_prefix(tuple(z_t)),
                sel,
                given,
                _tail(tuple(nxt)),
            )
            deriv.steps.append(
                TraceStep(
                    index,
                    sel,
                    "C3",
                    live_sorted,
                    tuple(sorted(nxt)),
                    eq,
                    z_t=tuple(sorted(z_t)),
                    w_t=tuple(sorted(w_t)),
                    s_t=s_t,
                )
            )
        live = set(deriv.steps[-1].next_targets)
        index += 1
    return deriv


def build_objective(
    g: CausalGraph,
    d: EmpiricalDistribution,
    target: Mapping[str, int],
    intervention: Mapping[str, int],
) -> tuple[BitPolynomial, DerivationTrace]:
    """Objective coefficients gamma(u) for Pr(target | do(intervention)).

    Returns the polynomial together with the derivation trace.  A constant
    polynomial means the query is identified by the input distribution.
    """
    for mapping, label in ((target, "target"), (intervention, "intervention")):
        for var, val in mapping.items():
            if val not in (0, 1):
                raise UnsupportedQueryError(f"non-binary {label} value {val!r} for {var!r}")
    if not target:
        raise UnsupportedQueryError("empty target")
    deriv = derive(g, tuple(target), tuple(intervention))
    pruned = deriv.graph
    x_values = {v: intervention[v] for v in deriv.effective_x}
    enc = deriv.encoding

    # Terms carry (coefficient, literal map, assignment of live endogenous vars).
    terms: list[tuple[float, dict[tuple[int, int], bool], dict[str, int]]] = [
        (1.0, {}, dict(target))
    ]
    for step in deriv.steps:
        new_terms: list[tuple[float, dict, dict]] = []
        if step.case == "C1a":
            for coeff, lits, assign in terms:
                new_terms.append((coeff, lits, assign))
        elif step.case == "C1b":
            cond_vars = [v for v in step.next_targets if pruned.is_endogenous(v)]
            for coeff, lits, assign in terms:
                factor = d.conditional(
                    {step.selected: assign[step.selected]},
                    {v: assign[v] for v in cond_vars},
                )
                if factor == 0.0:
                    continue
                rest = {v: w for v, w in assign.items() if v != step.selected}
                new_terms.append((coeff * factor, lits, rest))
        elif step.case == "C2":
            z_endo = [v for v in step.z_t if pruned.is_endogenous(v)]
            endo_parents = pruned.endogenous_parents(step.selected)
            for coeff, lits, assign in terms:
                for combo in product((0, 1), repeat=len(z_endo)):
                    extended = dict(assign)
                    extended.update(zip(z_endo, combo))
                    context = {}
                    for p in endo_parents:
                        context[p] = x_values[p] if p in x_values else extended[p]
                    lit = enc.literal(step.selected, context, extended[step.selected])
                    key = (lit.block, lit.offset)
                    if key in lits:
                        # each member is consumed exactly once, so a repeated
                        # bit position signals a broken walk
                        raise RuntimeError(f"bit {key} constrained twice for {step.selected!r}")
                    new_lits = dict(lits)
                    new_lits[key] = lit.positive
                    del extended[step.selected]
                    new_terms.append((coeff, new_lits, extended))
        elif step.case == "C3":
            z_endo = list(step.z_t)
            for coeff, lits, assign in terms:
                for combo in product((0, 1), repeat=len(z_endo)):
                    extended = dict(assign)
                    extended.update(zip(z_endo, combo))
                    given = dict(x_values)
                    given.update({v: extended[v] for v in step.s_t})
                    factor = d.conditional({step.selected: extended[step.selected]}, given)
                    if factor == 0.0:
                        continue
                    del extended[step.selected]
                    new_terms.append((coeff * factor, lits, extended))
        else:  # pragma: no cover - defensive
            raise RuntimeError(f"unknown case {step.case!r}")
        terms = new_terms

    poly_terms = []
    for coeff, lits, assign in terms:
        if assign:
            raise RuntimeError(f"unconsumed assignment {assign!r} after the walk")
        literals = tuple(
            BitLiteral(block, offset, positive) for (block, offset), positive in lits.items()
        )
        poly_terms.append(Term(coeff, literals))
    poly = BitPolynomial(poly_terms, enc).merged()

    trace = DerivationTrace(
        target=tuple(sorted(target.items())),
        intervention=tuple(sorted(x_values.items())),
        steps=tuple(deriv.steps),
        pruned_away=deriv.pruned_away,
        component_members=deriv.component.members if deriv.component else (),
        identified=poly.is_constant,
    )
    return poly, trace
