"""Canonical bit encoding of a confounded component's mechanism space.

Each value u of the component's exogenous variable is a bit string made of
one block per member: the block of member V holds one bit per configuration
of V's endogenous parents, and that bit is the output of V's mechanism under
that configuration.  Members are laid out in lexicographic name order; a
member's parents are also sorted lexicographically, with the last parent as
the least significant bit of the configuration index.

Bit strings are read most-significant-first, so the integer value of u is
the bit string interpreted as a binary number.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from .graph import CausalGraph, CComponent, GraphError


class EncodingError(ValueError):
    """Out-of-range index or an assignment that does not cover the layout."""


@dataclass(frozen=True)
class BitLiteral:
    """A single (possibly negated) bit of the encoding.

    `block` and `offset` address bit b^block_offset; a negated literal stands
    for (1 - bit).
    """

    block: int
    offset: int
    positive: bool

    def negated(self) -> "BitLiteral":
        return BitLiteral(self.block, self.offset, not self.positive)

    def __str__(self) -> str:
        core = f"b^{self.block + 1}_{self.offset}"
        return core if self.positive else f"(1-{core})"


@dataclass(frozen=True)
class BitBlock:
    member: str
    parents: tuple[str, ...]
    start: int
    width: int


class BitEncoding:
    """Block layout of the canonical exogenous variable of one component.

    Components without an exogenous node get the same "virtual" layout: their
    unknown deterministic mechanisms span an identical space, which is what
    the ground-truth machinery enumerates.
    """

    def __init__(self, g: CausalGraph, component: CComponent):
        members = tuple(sorted(component.members))
        blocks: list[BitBlock] = []
        start = 0
        for member in members:
            parents = g.endogenous_parents(member)
            width = 1 << len(parents)
            blocks.append(BitBlock(member=member, parents=parents, start=start, width=width))
            start += width
        self.component = component
        self.members = members
        self.blocks = tuple(blocks)
        self.total_bits = start
        self.cardinality = 1 << start
        self._block_index = {b.member: i for i, b in enumerate(blocks)}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BitEncoding):
            return NotImplemented
        return self.blocks == other.blocks

    def __repr__(self) -> str:
        layout = " ".join(f"{b.member}:{b.width}" for b in self.blocks)
        return f"BitEncoding({layout}; {self.total_bits} bits, |val(U)|={self.cardinality})"

    def block_of(self, member: str) -> BitBlock:
        try:
            return self.blocks[self._block_index[member]]
        except KeyError:
            raise EncodingError(f"{member!r} is not a member of the encoded component") from None

    def block_index(self, member: str) -> int:
        self.block_of(member)
        return self._block_index[member]

    def parent_offset(self, member: str, assignment: Mapping[str, int]) -> int:
        """Configuration index of `member`'s parents under `assignment`."""
        block = self.block_of(member)
        offset = 0
        for parent in block.parents:
            if parent not in assignment:
                raise EncodingError(f"assignment misses parent {parent!r} of {member!r}")
            value = assignment[parent]
            if value not in (0, 1):
                raise EncodingError(f"non-binary value {value!r} for {parent!r}")
            offset = (offset << 1) | value
        return offset

    def flat_position(self, block: int, offset: int) -> int:
        if not 0 <= block < len(self.blocks):
            raise EncodingError(f"block index {block} out of range")
        if not 0 <= offset < self.blocks[block].width:
            raise EncodingError(f"offset {offset} out of range for block {block}")
        return self.blocks[block].start + offset

    def bit(self, u: int, block: int, offset: int) -> int:
        if not 0 <= u < self.cardinality:
            raise EncodingError(f"u={u} outside [0, {self.cardinality})")
        pos = self.flat_position(block, offset)
        return (u >> (self.total_bits - 1 - pos)) & 1

    def literal(self, member: str, assignment: Mapping[str, int], value: int) -> BitLiteral:
        """The literal asserting f_member(parents per `assignment`) == value."""
        if value not in (0, 1):
            raise EncodingError(f"non-binary value {value!r} for {member!r}")
        offset = self.parent_offset(member, assignment)
        return BitLiteral(self._block_index[member], offset, positive=bool(value))

    def literal_value(self, u: int, lit: BitLiteral) -> int:
        bit = self.bit(u, lit.block, lit.offset)
        return bit if lit.positive else 1 - bit

    def shift_of(self, lit: BitLiteral) -> int:
        """Right-shift that brings the literal's bit to the low position of u."""
        return self.total_bits - 1 - self.flat_position(lit.block, lit.offset)

    def all_values(self) -> np.ndarray:
        if self.total_bits > 63:
            raise EncodingError("bit layout exceeds 63 bits; enumeration is not available")
        return np.arange(self.cardinality, dtype=np.uint64)


def build_encoding(g: CausalGraph, component: CComponent) -> BitEncoding:
    """Deterministic bit layout for a component's canonical exogenous variable."""
    if component.exogenous is None:
        raise GraphError(
            f"component {list(component.members)} has no exogenous parent to canonicalize"
        )
    return BitEncoding(g, component)


def eval_mechanism(
    e: BitEncoding, u: int, member: str, parent_assignment: Mapping[str, int]
) -> int:
    """Output of member's mechanism at exogenous value u: a single bit of u."""
    lit = e.literal(member, parent_assignment, 1)
    return e.bit(u, lit.block, lit.offset)


def symbolic_column_entry(
    e: BitEncoding, w: Mapping[str, int]
) -> tuple[tuple[BitLiteral, ...], tuple[BitLiteral, ...]]:
    """Split a column entry at configuration `w` into positive/negated literal lists.

    The concrete entry a_{u,w} equals the product of the positive literals
    times the product of (1 - bit) over the negated list, evaluated at u.
    `w` must assign every variable of the component's extended set.
    """
    for var in e.component.w_c:
        if var not in w:
            raise EncodingError(f"configuration misses variable {var!r}")
    l_plus: list[BitLiteral] = []
    l_minus: list[BitLiteral] = []
    for member in e.members:
        lit = e.literal(member, w, w[member])
        (l_plus if lit.positive else l_minus).append(lit)
    return tuple(l_plus), tuple(l_minus)


def evaluate_column_entry(e: BitEncoding, u: int, w: Mapping[str, int]) -> int:
    """Concrete 0/1 column entry a_{u,w}."""
    l_plus, l_minus = symbolic_column_entry(e, w)
    for lit in l_plus + l_minus:
        if e.literal_value(u, lit) == 0:
            return 0
    return 1
