"""Finite symmetry groups acting on kernel index grids.

An orbit is the set of grid positions mapped to one another by a group; every
position in an orbit shares one weight, so the orbit count is the number of
free parameters of a constrained kernel.  Orbits are computed by brute-force
closure of the index action and returned as tuples of ``(row, col)`` pairs
sorted row-major.  That sorted order doubles as the canonical accumulation
order used by the grouped inner product, which keeps floating-point
summation deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ShapeError
from .tensor import (
    D1,
    D2,
    DIH4_ELEMENTS,
    IDENTITY,
    M1,
    M2,
    ROT90,
    ROT180,
    ROT270,
    TransformElement,
    as_tensor,
    transform,
)


@dataclass(frozen=True)
class SymmetryGroup:
    """A finite group of exact point transformations, listed explicitly."""

    kind: str
    elements: tuple[TransformElement, ...]

    @property
    def order(self) -> int:
        return len(self.elements)

    def __str__(self):
        return self.kind


DIH4 = SymmetryGroup("dih4", DIH4_ELEMENTS)
C4 = SymmetryGroup("c4", (IDENTITY, ROT90, ROT180, ROT270))
C2 = SymmetryGroup("c2", (IDENTITY, ROT180))
GROUP_M1 = SymmetryGroup("m1", (IDENTITY, M1))
GROUP_M2 = SymmetryGroup("m2", (IDENTITY, M2))
GROUP_D1 = SymmetryGroup("d1", (IDENTITY, D1))
GROUP_D2 = SymmetryGroup("d2", (IDENTITY, D2))

GROUPS = {g.kind: g for g in (DIH4, C4, C2, GROUP_M1, GROUP_M2, GROUP_D1, GROUP_D2)}


def get_group(kind: str) -> SymmetryGroup:
    try:
        return GROUPS[kind]
    except KeyError:
        raise ValueError(f"unknown symmetry group {kind!r}; expected one of {sorted(GROUPS)}") from None


Orbit = tuple[tuple[int, int], ...]


@lru_cache(maxsize=None)
def _orbits_hw(kind: str, h: int, w: int) -> tuple[Orbit, ...]:
    """Orbits of the group's index action on an h x w grid.

    Uses the value-level transform on an index grid, so the action stays a
    single source of truth with :func:`ticnn.tensor.transform`.
    """
    group = GROUPS[kind]
    n = h * w
    idx = np.arange(n, dtype=np.float64).reshape(h, w)
    forward_maps = []
    for e in group.elements:
        moved = transform(idx, e).astype(np.int64).reshape(-1)
        fwd = np.empty(n, dtype=np.int64)
        fwd[moved] = np.arange(n)
        forward_maps.append(fwd)

    seen = np.zeros(n, dtype=bool)
    orbits = []
    for p in range(n):
        if seen[p]:
            continue
        members = sorted({int(fwd[p]) for fwd in forward_maps})
        for m in members:
            seen[m] = True
        orbits.append(tuple((m // w, m % w) for m in members))
    return tuple(orbits)


def orbits(group: SymmetryGroup, k: int) -> list[Orbit]:
    """Partition the k x k index grid into weight-sharing classes."""
    if k < 1:
        raise ValueError("kernel side must be >= 1")
    return list(_orbits_hw(group.kind, k, k))


def free_parameter_count(group: SymmetryGroup, k: int) -> int:
    """Number of independent weights in a k x k kernel constrained to ``group``."""
    return len(orbits(group, k))


def symmetrize(m, group: SymmetryGroup, mode: str = "average") -> np.ndarray:
    """Project a square matrix onto the group-shared weight set.

    Every cell of an orbit receives one common value: the orbit sum
    (``mode="sum"``) or the orbit mean (``mode="average"``).  Orbit members
    are accumulated in canonical row-major order.  The output is exactly
    invariant under every group element.
    """
    a = as_tensor(m)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"symmetrize requires a square matrix, got {a.shape}")
    if mode not in ("sum", "average"):
        raise ValueError(f"mode must be 'sum' or 'average', got {mode!r}")
    return _symmetrize_hw(a, group, mode)


def _symmetrize_hw(a: np.ndarray, group: SymmetryGroup, mode: str) -> np.ndarray:
    out = np.empty_like(a)
    for orbit in _orbits_hw(group.kind, a.shape[0], a.shape[1]):
        s = 0.0
        for (r, c) in orbit:
            s += a[r, c]
        if mode == "average":
            s /= len(orbit)
        for (r, c) in orbit:
            out[r, c] = s
    return out


def ti_residual(m, group: SymmetryGroup) -> float:
    """max over group elements of the sup-norm deviation from invariance."""
    a = as_tensor(m)
    worst = 0.0
    for e in group.elements:
        if e.kind == "identity":
            continue
        d = float(np.max(np.abs(a - transform(a, e))))
        if d > worst:
            worst = d
    return worst


def is_ti(m, group: SymmetryGroup, tol: float = 0.0) -> bool:
    """True iff the matrix deviates from every group transform by at most ``tol``."""
    return ti_residual(m, group) <= tol


def subsumes(outer: SymmetryGroup, inner: SymmetryGroup) -> bool:
    """True iff every element of ``inner`` belongs to ``outer``.

    A kernel invariant under the outer group is then automatically invariant
    under the inner one, so outer-constrained networks can serve anywhere an
    inner constraint is required.
    """
    return set(inner.elements) <= set(outer.elements)


def orbit_table_text(group: SymmetryGroup, k: int) -> str:
    """Debug dump: one orbit per line, positions as ``r,c`` pairs."""
    lines = []
    for orbit in orbits(group, k):
        lines.append(" ".join(f"{r},{c}" for (r, c) in orbit))
    return "\n".join(lines) + "\n"
