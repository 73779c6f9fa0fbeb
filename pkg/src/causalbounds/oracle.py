"""Ground-truth machinery: fully specified SCMs and exact enumeration.

Used to generate feasible benchmark instances and to validate bounds against
the true interventional quantities.  Everything here enumerates exactly;
limits are explicit and raise instead of truncating.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass
from functools import cached_property
from itertools import product

import numpy as np

from .canon import BitEncoding
from .dist import EmpiricalDistribution
from .errors import SizeLimitError
from .graph import CausalGraph, CComponent, c_components

ENUMERATION_LIMIT = 1 << 26
PROB_FLOOR = 1e-6


@dataclass(frozen=True)
class FullScm:
    """A causal graph with canonical mechanisms pinned by exogenous tables.

    Each confounded component carries a probability vector over the values of
    its (possibly virtual) canonical exogenous variable; a value determines
    one mechanism per member.
    """

    graph: CausalGraph
    components: tuple[CComponent, ...]
    encodings: tuple[BitEncoding, ...]
    u_probs: tuple[np.ndarray, ...]

    def __post_init__(self):
        for probs, enc in zip(self.u_probs, self.encodings):
            if probs.shape != (enc.cardinality,):
                raise ValueError("exogenous table does not match the encoding cardinality")
            if np.any(probs < 0) or abs(float(probs.sum()) - 1.0) > 1e-12:
                raise ValueError("exogenous table must be a distribution (1e-12 tolerance)")

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(sorted(self.graph.endogenous))

    def component_index(self, node: str) -> int:
        for i, comp in enumerate(self.components):
            if node in comp:
                return i
        raise ValueError(f"{node!r} is not an endogenous node of this model")

    @cached_property
    def joint(self) -> EmpiricalDistribution:
        return exact_joint(self)


def random_scm(
    g: CausalGraph,
    seed: int,
    *,
    floor: float = PROB_FLOOR,
    degenerate: bool = False,
) -> FullScm:
    """Random fully specified SCM with canonical exogenous cardinalities.

    Exogenous tables are normalized exponentials of uniform draws, floored at
    `floor` (and renormalized) so routine instances avoid zero-probability
    contexts.  With `degenerate=True` the floor is dropped and part of the
    mass is zeroed outright, which exercises zero-conditioning paths.
    Deterministic per seed.
    """
    g.require_quasi_markovian()
    rng = np.random.default_rng(seed)
    comps = tuple(c_components(g))
    encodings = tuple(BitEncoding(g, comp) for comp in comps)
    tables: list[np.ndarray] = []
    for comp, enc in zip(comps, encodings):
        if enc.cardinality > ENUMERATION_LIMIT:
            raise SizeLimitError(
                f"component {list(comp.members)} has {enc.cardinality} mechanisms, "
                f"beyond the enumeration limit {ENUMERATION_LIMIT}"
            )
        draws = rng.random(enc.cardinality)
        if comp.exogenous is None:
            # no exogenous noise: a fixed, randomly chosen deterministic mechanism
            probs = np.zeros(enc.cardinality)
            probs[int(rng.integers(enc.cardinality))] = 1.0
        else:
            probs = np.exp(draws)
            if degenerate:
                probs[draws < 0.4] = 0.0
                if probs.sum() == 0.0:
                    probs[int(np.argmax(draws))] = 1.0
            else:
                probs = np.maximum(probs / probs.sum(), floor)
        probs = probs / probs.sum()
        tables.append(probs)
    return FullScm(graph=g, components=comps, encodings=encodings, u_probs=tuple(tables))


def _mechanism_mask(
    enc: BitEncoding, us: np.ndarray, member: str, config: Mapping[str, int]
) -> np.ndarray:
    """Boolean mask over `us` of mechanisms with f_member(parents) == config[member]."""
    lit = enc.literal(member, config, config[member])
    bits = (us >> np.uint64(enc.shift_of(lit))) & np.uint64(1)
    return bits == (1 if lit.positive else 0)


def _component_factor(
    enc: BitEncoding,
    probs: np.ndarray,
    scope: tuple[str, ...],
    members: tuple[str, ...],
    pinned_u: int | None = None,
) -> np.ndarray:
    """Factor sum_u Pr(u) prod_{V in members} [f_V(parents)=v] over `scope` configs.

    With `pinned_u` the sum collapses to the indicator of that mechanism.
    """
    size = enc.cardinality * (1 << len(scope))
    if pinned_u is None and size > ENUMERATION_LIMIT:
        raise SizeLimitError(
            f"component factor enumeration of size {size} exceeds {ENUMERATION_LIMIT}"
        )
    us = enc.all_values() if pinned_u is None else np.array([pinned_u], dtype=np.uint64)
    weights = probs if pinned_u is None else np.ones(1)
    factor = np.zeros((2,) * len(scope))
    for config in product((0, 1), repeat=len(scope)):
        cfg = dict(zip(scope, config))
        mask = np.ones(us.shape, dtype=bool)
        for member in members:
            mask &= _mechanism_mask(enc, us, member, cfg)
        factor[config] = float(weights[mask].sum())
    return factor


def _broadcast(factor: np.ndarray, scope: tuple[str, ...], variables: tuple[str, ...]) -> np.ndarray:
    """Align a factor's axes with the global variable order for broadcasting."""
    positions = [variables.index(v) for v in scope]
    perm = np.argsort(positions)
    aligned = np.transpose(factor, perm)
    shape = [1] * len(variables)
    for p in positions:
        shape[p] = 2
    return aligned.reshape(shape)


def exact_joint(s: FullScm, *, check: bool = True) -> EmpiricalDistribution:
    """Observational joint over the endogenous variables by exact summation.

    Also verifies the confounded-component factor identity (each factor equals
    the product of its members' conditionals given their topological
    predecessors) at every configuration with positive context mass.
    """
    variables = s.variables
    if len(variables) > 20:
        raise SizeLimitError(f"{len(variables)} endogenous variables exceed the dense-table limit")
    joint = np.ones((2,) * len(variables))
    factors = []
    for comp, enc, probs in zip(s.components, s.encodings, s.u_probs):
        factor = _component_factor(enc, probs, comp.w_c, comp.members)
        factors.append((comp, factor))
        joint = joint * _broadcast(factor, comp.w_c, variables)
    dist = EmpiricalDistribution(variables, joint.reshape(-1))
    if check:
        _check_tian_identity(dist, factors)
    return dist


def _check_tian_identity(dist: EmpiricalDistribution, factors) -> None:
    for comp, factor in factors:
        for config in product((0, 1), repeat=len(comp.w_c)):
            cfg = dict(zip(comp.w_c, config))
            rhs = 1.0
            skip = False
            for member in comp.members:
                given = {v: cfg[v] for v in comp.w_v[member]}
                value, flagged = dist.conditional({member: cfg[member]}, given, with_flag=True)
                if flagged:
                    skip = True
                    break
                rhs *= value
            if skip:
                continue
            if abs(factor[config] - rhs) > 1e-12:
                raise AssertionError(
                    f"component factor mismatch at {cfg}: {factor[config]} vs {rhs}"
                )


def exact_interventional(
    s: FullScm,
    target: Mapping[str, int],
    intervention: Mapping[str, int],
    *,
    check: bool = True,
) -> float:
    """Pr(target | do(intervention)) by truncated-mechanism enumeration.

    Cross-checks the mixed factorization (empirical factors for untouched
    components, mechanism sums for intervened ones) whenever no
    zero-probability context interferes.
    """
    variables = s.variables
    for v in list(target) + list(intervention):
        if v not in variables:
            raise ValueError(f"unknown endogenous variable {v!r}")
    post = np.ones((2,) * len(variables))
    intervened = set(intervention)
    for comp, enc, probs in zip(s.components, s.encodings, s.u_probs):
        members = tuple(m for m in comp.members if m not in intervened)
        factor = _component_factor(enc, probs, comp.w_c, members)
        post = post * _broadcast(factor, comp.w_c, variables)
    for var, val in intervention.items():
        indicator = np.zeros(2)
        indicator[val] = 1.0
        post = post * _broadcast(indicator, (var,), variables)
    idx = tuple(target.get(v, slice(None)) for v in variables)
    value = float(post[idx].sum())

    if check:
        mixed, clean = _mixed_factorization(s, target, intervention)
        if clean and abs(mixed - value) > 1e-10:
            raise AssertionError(
                f"mixed factorization {mixed} disagrees with truncation {value}"
            )
    return value


def _mixed_factorization(
    s: FullScm, target: Mapping[str, int], intervention: Mapping[str, int]
) -> tuple[float, bool]:
    """Evaluate the semi-marginal factorization; returns (value, no-zero-context)."""
    variables = s.variables
    dist = s.joint
    intervened = set(intervention)
    post = np.ones((2,) * len(variables))
    clean = True
    for comp, enc, probs in zip(s.components, s.encodings, s.u_probs):
        if comp.member_set & intervened:
            members = tuple(m for m in comp.members if m not in intervened)
            factor = _component_factor(enc, probs, comp.w_c, members)
        else:
            factor = np.ones((2,) * len(comp.w_c))
            for config in product((0, 1), repeat=len(comp.w_c)):
                cfg = dict(zip(comp.w_c, config))
                value = 1.0
                for member in comp.members:
                    given = {v: cfg[v] for v in comp.w_v[member]}
                    p, flagged = dist.conditional({member: cfg[member]}, given, with_flag=True)
                    clean = clean and not flagged
                    value *= p
                factor[config] = value
        post = post * _broadcast(factor, comp.w_c, variables)
    for var, val in intervention.items():
        indicator = np.zeros(2)
        indicator[val] = 1.0
        post = post * _broadcast(indicator, (var,), variables)
    idx = tuple(target.get(v, slice(None)) for v in variables)
    return float(post[idx].sum()), clean


def exact_interventional_given_u(
    s: FullScm,
    target: Mapping[str, int],
    intervention: Mapping[str, int],
    u: int,
) -> float:
    """Pr(target | do(intervention), U*=u): the intervened component's mechanisms pinned."""
    variables = s.variables
    intervened = set(intervention)
    holder = {s.component_index(x) for x in intervened}
    if len(holder) != 1:
        raise ValueError("interventions must sit in a single confounded component")
    pinned_index = holder.pop()
    post = np.ones((2,) * len(variables))
    for i, (comp, enc, probs) in enumerate(zip(s.components, s.encodings, s.u_probs)):
        members = tuple(m for m in comp.members if m not in intervened)
        pinned = u if i == pinned_index else None
        factor = _component_factor(enc, probs, comp.w_c, members, pinned_u=pinned)
        post = post * _broadcast(factor, comp.w_c, variables)
    for var, val in intervention.items():
        indicator = np.zeros(2)
        indicator[val] = 1.0
        post = post * _broadcast(indicator, (var,), variables)
    idx = tuple(target.get(v, slice(None)) for v in variables)
    return float(post[idx].sum())


# -- benchmark family ----------------------------------------------------------


def family_graph(M: int, N: int) -> CausalGraph:
    """Parameterized benchmark template.

    Treatment X feeds M observed confounder children Z_j and a chain of N
    mediators W_i (all sharing X's exogenous parent); every Z_j points at
    every W_i; the last mediator drives the outcome Y, which shares its
    exogenous parent with the Z_j.
    """
    if M < 1 or N < 1:
        raise ValueError("family sizes require M >= 1 and N >= 1")
    zs = [f"Z{j}" for j in range(1, M + 1)]
    ws = [f"W{i}" for i in range(1, N + 1)]
    nodes = [("X", "endogenous"), ("Y", "endogenous")]
    nodes += [(z, "endogenous") for z in zs]
    nodes += [(w, "endogenous") for w in ws]
    nodes += [("U1", "exogenous"), ("U2", "exogenous")]
    edges = [("U1", "X"), ("U2", "Y")]
    edges += [("U1", w) for w in ws]
    edges += [("U2", z) for z in zs]
    edges += [("X", z) for z in zs]
    edges += [(z, w) for z in zs for w in ws]
    chain = ["X"] + ws
    edges += [(chain[i], chain[i + 1]) for i in range(len(chain) - 1)]
    edges += [(ws[-1], "Y")]
    return CausalGraph(nodes, edges)


def family_instance(
    M: int, N: int, seed: int
) -> tuple[CausalGraph, EmpiricalDistribution, dict]:
    """A feasible benchmark instance: graph, induced distribution, and query."""
    g = family_graph(M, N)
    scm = random_scm(g, seed)
    dist = exact_joint(scm)
    query = {"target": {"Y": 1}, "intervention": {"X": 1}}
    return g, dist, query
