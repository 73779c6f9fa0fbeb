"""Causal diagrams and the graph-theoretic machinery built on them.

A :class:`CausalGraph` is a DAG over named endogenous and exogenous nodes.
All surgery operations (`mutilate`, `intervened_semi_marginal`,
`ancestral_prune`) return new graphs; instances are immutable after
construction and safe to share between threads.
"""

from __future__ import annotations

import heapq
from collections.abc import Collection, Iterable, Mapping
from dataclasses import dataclass, field

ENDOGENOUS = "endogenous"
EXOGENOUS = "exogenous"

_KIND_ALIASES = {
    "endogenous": ENDOGENOUS,
    "endo": ENDOGENOUS,
    "exogenous": EXOGENOUS,
    "exo": EXOGENOUS,
}


class GraphError(ValueError):
    """Raised for malformed graphs or invalid graph operations."""


class SeparatorNotFoundError(GraphError):
    """No separator satisfies both d-separation conditions.

    Signals a violated precondition of the separator search: existence is
    guaranteed whenever the caller respects them.
    """


class CausalGraph:
    """Directed acyclic graph over endogenous and exogenous variables.

    Exogenous nodes must be roots.  The topological order is deterministic:
    ties are broken lexicographically by node name.
    """

    def __init__(self, nodes: Iterable[tuple[str, str]], edges: Iterable[tuple[str, str]]):
        kind_map: dict[str, str] = {}
        for name, kind in nodes:
            if name in kind_map:
                raise GraphError(f"duplicate node name {name!r}")
            norm = _KIND_ALIASES.get(str(kind).lower())
            if norm is None:
                raise GraphError(f"unknown node kind {kind!r} for node {name!r}")
            kind_map[name] = norm
        self._kind = kind_map
        parents: dict[str, set[str]] = {n: set() for n in kind_map}
        children: dict[str, set[str]] = {n: set() for n in kind_map}
        edge_set: set[tuple[str, str]] = set()
        for parent, child in edges:
            if parent not in kind_map or child not in kind_map:
                missing = parent if parent not in kind_map else child
                raise GraphError(f"edge ({parent!r}, {child!r}) references unknown node {missing!r}")
            if parent == child:
                raise GraphError(f"self-loop on node {parent!r}")
            if (parent, child) in edge_set:
                continue
            edge_set.add((parent, child))
            parents[child].add(parent)
            children[parent].add(child)
        for name in kind_map:
            if kind_map[name] == EXOGENOUS and parents[name]:
                raise GraphError(f"exogenous node {name!r} has incoming edges {sorted(parents[name])}")
        self._parents = {n: frozenset(ps) for n, ps in parents.items()}
        self._children = {n: frozenset(cs) for n, cs in children.items()}
        self._edges = frozenset(edge_set)
        self._topo = self._topological_sort()
        self._topo_index = {n: i for i, n in enumerate(self._topo)}

    def _topological_sort(self) -> tuple[str, ...]:
        indeg = {n: len(self._parents[n]) for n in self._kind}
        ready = [n for n, d in indeg.items() if d == 0]
        heapq.heapify(ready)
        order: list[str] = []
        while ready:
            node = heapq.heappop(ready)
            order.append(node)
            for child in self._children[node]:
                indeg[child] -= 1
                if indeg[child] == 0:
                    heapq.heappush(ready, child)
        if len(order) != len(self._kind):
            cyclic = sorted(n for n, d in indeg.items() if d > 0)
            raise GraphError(f"graph contains a cycle through {cyclic}")
        return tuple(order)

    # -- basic accessors ---------------------------------------------------

    @property
    def nodes(self) -> tuple[str, ...]:
        return self._topo

    @property
    def topological_order(self) -> tuple[str, ...]:
        return self._topo

    @property
    def edges(self) -> frozenset[tuple[str, str]]:
        return self._edges

    @property
    def endogenous(self) -> tuple[str, ...]:
        return tuple(n for n in self._topo if self._kind[n] == ENDOGENOUS)

    @property
    def exogenous(self) -> tuple[str, ...]:
        return tuple(n for n in self._topo if self._kind[n] == EXOGENOUS)

    def kind(self, node: str) -> str:
        self._require(node)
        return self._kind[node]

    def is_endogenous(self, node: str) -> bool:
        return self.kind(node) == ENDOGENOUS

    def parents(self, node: str) -> frozenset[str]:
        self._require(node)
        return self._parents[node]

    def children(self, node: str) -> frozenset[str]:
        self._require(node)
        return self._children[node]

    def endogenous_parents(self, node: str) -> tuple[str, ...]:
        """Endogenous parents of `node`, sorted lexicographically."""
        return tuple(sorted(p for p in self.parents(node) if self._kind[p] == ENDOGENOUS))

    def exogenous_parents(self, node: str) -> tuple[str, ...]:
        return tuple(sorted(p for p in self.parents(node) if self._kind[p] == EXOGENOUS))

    def exogenous_parent(self, node: str) -> str | None:
        """The unique exogenous parent of an endogenous node, if any."""
        exo = self.exogenous_parents(node)
        if len(exo) > 1:
            raise GraphError(f"node {node!r} has several exogenous parents {list(exo)}")
        return exo[0] if exo else None

    def topo_index(self, node: str) -> int:
        self._require(node)
        return self._topo_index[node]

    def _require(self, node: str) -> None:
        if node not in self._kind:
            raise GraphError(f"unknown node {node!r}")

    def __contains__(self, node: str) -> bool:
        return node in self._kind

    def __repr__(self) -> str:
        return f"CausalGraph({len(self.endogenous)} endogenous, {len(self.exogenous)} exogenous, {len(self._edges)} edges)"

    # -- reachability ------------------------------------------------------

    def ancestors(self, nodes: Iterable[str]) -> frozenset[str]:
        """Proper ancestors of `nodes` (the nodes themselves excluded)."""
        seeds = list(nodes)
        for n in seeds:
            self._require(n)
        seen: set[str] = set()
        stack = [p for n in seeds for p in self._parents[n]]
        while stack:
            node = stack.pop()
            if node in seen:
                continue
            seen.add(node)
            stack.extend(self._parents[node])
        return frozenset(seen)

    def descendants(self, nodes: Iterable[str]) -> frozenset[str]:
        """Proper descendants of `nodes`."""
        seeds = list(nodes)
        for n in seeds:
            self._require(n)
        seen: set[str] = set()
        stack = [c for n in seeds for c in self._children[n]]
        while stack:
            node = stack.pop()
            if node in seen:
                continue
            seen.add(node)
            stack.extend(self._children[node])
        return frozenset(seen)

    def ancestral_closure(self, nodes: Iterable[str]) -> frozenset[str]:
        seeds = frozenset(nodes)
        return seeds | self.ancestors(seeds)

    # -- quasi-Markovian check ---------------------------------------------

    @property
    def is_quasi_markovian(self) -> bool:
        return not self._quasi_markovian_offenders()

    def _quasi_markovian_offenders(self) -> list[str]:
        return [
            n
            for n in self.endogenous
            if len([p for p in self._parents[n] if self._kind[p] == EXOGENOUS]) > 1
        ]

    def require_quasi_markovian(self) -> None:
        offenders = self._quasi_markovian_offenders()
        if offenders:
            raise GraphError(
                "graph is not quasi-Markovian: nodes with several exogenous parents: "
                + ", ".join(offenders)
            )


@dataclass(frozen=True)
class CComponent:
    """A confounded component and its derived variable sets.

    `members` are the component's endogenous nodes in topological order.
    `w_c` extends the members with all their endogenous parents; `w_v`
    maps each member to the `w_c` variables that precede it topologically.
    """

    members: tuple[str, ...]
    exogenous: str | None
    w_c: tuple[str, ...]
    w_v: Mapping[str, tuple[str, ...]] = field(hash=False)

    @property
    def member_set(self) -> frozenset[str]:
        return frozenset(self.members)

    def __contains__(self, node: str) -> bool:
        return node in self.member_set


def c_components(g: CausalGraph) -> list[CComponent]:
    """Partition the endogenous nodes into confounded components.

    Two endogenous nodes belong to the same component iff they are connected
    in the undirected graph that keeps only exogenous-to-endogenous edges.
    Components are returned ordered by their earliest member in topological
    order.
    """
    parent_map: dict[str, set[str]] = {}
    for node in g.endogenous:
        parent_map[node] = set()
    # union endogenous children of each exogenous node
    rep: dict[str, str] = {n: n for n in g.endogenous}

    def find(a: str) -> str:
        while rep[a] != a:
            rep[a] = rep[rep[a]]
            a = rep[a]
        return a

    for u in g.exogenous:
        kids = sorted(c for c in g.children(u) if g.is_endogenous(c))
        for other in kids[1:]:
            ra, rb = find(kids[0]), find(other)
            if ra != rb:
                rep[rb] = ra
    groups: dict[str, list[str]] = {}
    for node in g.endogenous:
        groups.setdefault(find(node), []).append(node)

    components: list[CComponent] = []
    for members in groups.values():
        members_topo = tuple(sorted(members, key=g.topo_index))
        exo_parents = {p for m in members_topo for p in g.exogenous_parents(m)}
        if len(exo_parents) > 1:
            raise GraphError(
                f"c-component {list(members_topo)} has several exogenous parents {sorted(exo_parents)}"
            )
        exo = next(iter(exo_parents)) if exo_parents else None
        w_c_set = set(members_topo)
        for m in members_topo:
            w_c_set.update(g.endogenous_parents(m))
        w_c = tuple(sorted(w_c_set, key=g.topo_index))
        w_v = {
            m: tuple(v for v in w_c if g.topo_index(v) < g.topo_index(m)) for m in members_topo
        }
        components.append(CComponent(members=members_topo, exogenous=exo, w_c=w_c, w_v=w_v))
    components.sort(key=lambda comp: g.topo_index(comp.members[0]))
    return components


def component_of(g: CausalGraph, node: str) -> CComponent:
    """The confounded component containing `node`."""
    for comp in c_components(g):
        if node in comp:
            return comp
    raise GraphError(f"node {node!r} is not endogenous")


def mutilate(
    g: CausalGraph,
    remove_incoming: Collection[str] = (),
    remove_outgoing: Collection[str] = (),
) -> CausalGraph:
    """Edge surgery: delete edges into `remove_incoming` and out of `remove_outgoing`."""
    incoming = frozenset(remove_incoming)
    outgoing = frozenset(remove_outgoing)
    for n in incoming | outgoing:
        g._require(n)
    edges = [
        (p, c) for (p, c) in g.edges if c not in incoming and p not in outgoing
    ]
    return CausalGraph([(n, g.kind(n)) for n in g.nodes], edges)


def d_separated(
    g: CausalGraph,
    a: Collection[str],
    b: Collection[str],
    s: Collection[str] = (),
) -> bool:
    """Standard d-separation test via the reachability algorithm.

    Returns True iff every path between `a` and `b` is blocked by `s`.
    The three sets must be pairwise disjoint.
    """
    a, b, s = frozenset(a), frozenset(b), frozenset(s)
    if a & b or a & s or b & s:
        raise GraphError("d-separation query requires pairwise disjoint node sets")
    for n in a | b | s:
        g._require(n)
    s_anc = s | g.ancestors(s)
    # states: (node, came_from_child); trails may continue through a node
    # downward unless conditioned, and upward through conditioned colliders.
    visited: set[tuple[str, bool]] = set()
    stack: list[tuple[str, bool]] = [(n, True) for n in a]
    while stack:
        node, from_child = stack.pop()
        if (node, from_child) in visited:
            continue
        visited.add((node, from_child))
        if node in b:
            return False
        if from_child:
            if node not in s:
                stack.extend((p, True) for p in g.parents(node))
                stack.extend((c, False) for c in g.children(node))
        else:
            if node not in s:
                stack.extend((c, False) for c in g.children(node))
            if node in s_anc:
                stack.extend((p, True) for p in g.parents(node))
    return True


def intervened_semi_marginal(g: CausalGraph, intervened: Collection[str]) -> CausalGraph:
    """Marginalize exogenous parents of non-intervened components, then cut interventions.

    Each member V of a non-intervened component loses its exogenous parent and
    gains edges from every variable preceding it within the component's
    extended set; intervened components keep their exogenous parent.  Finally
    all edges into intervened nodes are removed.
    """
    g.require_quasi_markovian()
    intervened = frozenset(intervened)
    for n in intervened:
        if not g.is_endogenous(n):
            raise GraphError(f"intervened node {n!r} is not endogenous")
    keep_exo: set[str] = set()
    extra_edges: list[tuple[str, str]] = []
    for comp in c_components(g):
        if comp.member_set & intervened:
            if comp.exogenous is not None:
                keep_exo.add(comp.exogenous)
        else:
            for member in comp.members:
                extra_edges.extend((w, member) for w in comp.w_v[member])
    nodes = [(n, g.kind(n)) for n in g.nodes if g.is_endogenous(n) or n in keep_exo]
    kept_names = {n for n, _ in nodes}
    edges = {
        (p, c)
        for (p, c) in list(g.edges) + extra_edges
        if p in kept_names and c in kept_names and not (g.kind(p) == EXOGENOUS and p not in keep_exo)
    }
    edges = {(p, c) for (p, c) in edges if c not in intervened}
    return CausalGraph(nodes, sorted(edges))


def ancestral_prune(g: CausalGraph, targets: Collection[str]) -> CausalGraph:
    """Induced subgraph on the targets and all their ancestors."""
    keep = g.ancestral_closure(targets)
    nodes = [(n, g.kind(n)) for n in g.nodes if n in keep]
    edges = [(p, c) for (p, c) in g.edges if p in keep and c in keep]
    return CausalGraph(nodes, edges)


def find_c3_separator(
    g: CausalGraph,
    y: str,
    x: str | Collection[str],
    carried: Collection[str] = (),
) -> frozenset[str]:
    """Search for the separator set used when target and treatment are unconfounded.

    Returns the smallest set W (ties broken lexicographically) of endogenous
    ancestors of `carried` and `y` such that, with S = (W + endogenous
    carried) - {y}:

      * y is d-separated from x by S once edges leaving x are removed, and
      * y is d-separated from x's exogenous parent (if any) by S + {x}.

    `x` may be a single node or a set of jointly intervened nodes from one
    confounded component.
    """
    xs = frozenset([x]) if isinstance(x, str) else frozenset(x)
    carried = frozenset(carried)
    g._require(y)
    for n in xs:
        g._require(n)
    carried_endo = frozenset(n for n in carried if g.is_endogenous(n))
    exo_parents = {u for n in xs for u in g.exogenous_parents(n)}
    if len(exo_parents) > 1:
        raise GraphError(f"intervened nodes {sorted(xs)} span several exogenous parents")
    u_t = next(iter(exo_parents)) if exo_parents else None

    closure = g.ancestral_closure(carried_endo | {y})
    candidates = sorted(
        n
        for n in closure
        if g.is_endogenous(n) and n != y and n not in xs and n not in carried_endo
    )
    g_cut = mutilate(g, remove_outgoing=xs)
    from itertools import combinations

    for size in range(len(candidates) + 1):
        for combo in combinations(candidates, size):
            s_t = (frozenset(combo) | carried_endo) - {y}
            if not d_separated(g_cut, {y}, xs, s_t):
                continue
            if u_t is not None and not d_separated(g, {y}, {u_t}, s_t | xs):
                continue
            return frozenset(combo)
    raise SeparatorNotFoundError(
        f"no separator for target {y!r} and intervention {sorted(xs)} "
        f"(carried {sorted(carried)}); check the preconditions"
    )
