"""Empirical distributions over binary variables.

The distribution acts as the conditional-probability oracle consumed by the
objective builder: any conditional P(R=r | S=s) over disjoint partial
assignments can be queried.  Storage is a dense table of size 2^n, which is
the right trade-off at desk scale (n <= ~20) because conditional queries
dominate the cost profile downstream.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path

import numpy as np

NORMALIZATION_TOL = 1e-9


class DistributionError(ValueError):
    """Malformed table, broken normalization, or an unknown variable."""


class EmpiricalDistribution:
    """Dense joint probability table over named binary variables.

    Immutable after construction; concurrent reads are safe.  Assignment
    strings and row indices follow the declared variable order with the last
    variable as the least significant bit.
    """

    def __init__(self, variables: Sequence[str], table: np.ndarray | Sequence[float]):
        self.variables = tuple(variables)
        if len(set(self.variables)) != len(self.variables):
            raise DistributionError("duplicate variable names")
        n = len(self.variables)
        table = np.asarray(table, dtype=float)
        if table.shape != (1 << n,):
            raise DistributionError(
                f"table must have {1 << n} entries for {n} variables, got {table.shape}"
            )
        if np.any(table < -1e-12):
            raise DistributionError("negative probability in table")
        total = float(table.sum())
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise DistributionError(f"table sums to {total!r}, expected 1 within {NORMALIZATION_TOL}")
        self._table = np.clip(table, 0.0, None)
        self._table.setflags(write=False)
        self._tensor = self._table.reshape((2,) * n)
        self._index = {v: i for i, v in enumerate(self.variables)}
        self._marginal_cache: dict[tuple[tuple[str, int], ...], float] = {}

    # -- constructors --------------------------------------------------------

    @classmethod
    def from_assignments(
        cls, variables: Sequence[str], entries: Mapping[str, float]
    ) -> "EmpiricalDistribution":
        """Build from a map of 0/1 assignment strings to probabilities.

        Missing assignments default to probability zero.
        """
        n = len(variables)
        table = np.zeros(1 << n)
        for key, prob in entries.items():
            if len(key) != n or set(key) - {"0", "1"}:
                raise DistributionError(f"bad assignment string {key!r} for {n} variables")
            table[int(key, 2)] += float(prob)
        return cls(variables, table)

    @classmethod
    def from_samples(cls, variables: Sequence[str], rows: Iterable[str]) -> "EmpiricalDistribution":
        """Relative frequencies of 0/1 assignment strings, one sample per row."""
        n = len(variables)
        counts = np.zeros(1 << n)
        total = 0
        for row in rows:
            row = row.strip()
            if not row:
                continue
            if len(row) != n or set(row) - {"0", "1"}:
                raise DistributionError(f"bad sample row {row!r} for {n} variables")
            counts[int(row, 2)] += 1
            total += 1
        if total == 0:
            raise DistributionError("sample file contains no rows")
        return cls(variables, counts / total)

    # -- queries --------------------------------------------------------------

    @property
    def table(self) -> np.ndarray:
        return self._table

    def _check_assignment(self, assignment: Mapping[str, int]) -> None:
        for var, val in assignment.items():
            if var not in self._index:
                raise DistributionError(f"unknown variable {var!r}")
            if val not in (0, 1):
                raise DistributionError(f"non-binary value {val!r} for {var!r}")

    def probability(self, assignment: Mapping[str, int]) -> float:
        """Marginal probability of a partial assignment."""
        self._check_assignment(assignment)
        key = tuple(sorted(assignment.items()))
        cached = self._marginal_cache.get(key)
        if cached is not None:
            return cached
        idx = tuple(assignment.get(v, slice(None)) for v in self.variables)
        value = float(self._tensor[idx].sum())
        self._marginal_cache[key] = value
        return value

    def conditional(
        self,
        event: Mapping[str, int],
        given: Mapping[str, int] | None = None,
        *,
        with_flag: bool = False,
    ):
        """P(event | given); returns 0 with a raised flag when P(given) = 0.

        The zero-conditioning convention keeps zero-mass contexts usable:
        downstream such terms are multiplied by zero-mass factors anyway.
        """
        given = dict(given or {})
        if set(event) & set(given):
            raise DistributionError(
                f"event and conditioning sets overlap: {sorted(set(event) & set(given))}"
            )
        denom = self.probability(given)
        if denom <= 0.0:
            return (0.0, True) if with_flag else 0.0
        joint = self.probability({**event, **given})
        value = joint / denom
        return (value, False) if with_flag else value

    def marginalize(self, variables: Sequence[str]) -> "EmpiricalDistribution":
        """Marginal distribution over a subset of the variables (given order)."""
        for v in variables:
            if v not in self._index:
                raise DistributionError(f"unknown variable {v!r}")
        keep = {self._index[v] for v in variables}
        drop = tuple(i for i in range(len(self.variables)) if i not in keep)
        reduced = self._tensor.sum(axis=drop) if drop else self._tensor
        current = [v for v in self.variables if self._index[v] in keep]
        perm = [current.index(v) for v in variables]
        reduced = np.transpose(reduced, perm)
        return EmpiricalDistribution(variables, reduced.reshape(-1))

    def __repr__(self) -> str:
        return f"EmpiricalDistribution({len(self.variables)} variables)"


def load(source: str | Path, variables: Sequence[str] | None = None) -> EmpiricalDistribution:
    """Load a distribution file (table or samples format, see the CLI docs)."""
    from . import formats

    dist = formats.read_distribution(Path(source))
    if variables is not None and tuple(variables) != dist.variables:
        raise DistributionError(
            f"file declares variables {list(dist.variables)}, expected {list(variables)}"
        )
    return dist
