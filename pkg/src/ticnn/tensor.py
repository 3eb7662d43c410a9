"""Dense 2D tensors and their exact geometric transformations.

A tensor is a float64 numpy array indexed ``(row, col)``.  The eight point
transformations (identity, three rotations, four reflections) permute cell
values exactly, with no arithmetic on the values.  The convention is pinned
by the 2x2 case: ``rot90`` sends ``[[1, 2], [3, 4]]`` to ``[[3, 1], [4, 2]]``,
i.e. output cell ``(r, c)`` reads input cell ``(H-1-c, r)``.  Reflections:
``m1`` flips left-right, ``m2`` flips top-down, ``d2`` mirrors across the
main diagonal (transpose), ``d1`` across the anti-diagonal.

Integer translations zero-fill vacated cells.  Interpolated rotation by an
arbitrary angle is a separate, lossy operation and deliberately does not
belong to the exact family.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

POINT_KINDS = (
    "identity",
    "rot90",
    "rot180",
    "rot270",
    "reflect-m1",
    "reflect-m2",
    "reflect-d1",
    "reflect-d2",
)

# Point transformations that map an H x W grid onto an H x W grid.  The
# remaining four exchange the axes and therefore require square input.
_SHAPE_PRESERVING = {"identity", "rot180", "reflect-m1", "reflect-m2"}


@dataclass(frozen=True)
class TransformElement:
    """One exact grid transformation: a point symmetry or an integer shift."""

    kind: str
    dx: int = 0
    dy: int = 0

    def __post_init__(self):
        if self.kind not in POINT_KINDS and self.kind != "translate":
            raise ValueError(f"unknown transform kind: {self.kind!r}")
        if self.kind != "translate" and (self.dx or self.dy):
            raise ValueError("dx/dy are only meaningful for translate elements")

    def __str__(self):
        if self.kind == "translate":
            return f"translate({self.dx},{self.dy})"
        return self.kind


IDENTITY = TransformElement("identity")
ROT90 = TransformElement("rot90")
ROT180 = TransformElement("rot180")
ROT270 = TransformElement("rot270")
M1 = TransformElement("reflect-m1")
M2 = TransformElement("reflect-m2")
D1 = TransformElement("reflect-d1")
D2 = TransformElement("reflect-d2")

#: The eight point elements, in canonical order.
DIH4_ELEMENTS = (IDENTITY, ROT90, ROT180, ROT270, M1, M2, D1, D2)


def translate(dx: int, dy: int) -> TransformElement:
    """Shift contents by ``dx`` columns and ``dy`` rows (zero fill)."""
    return TransformElement("translate", dx=int(dx), dy=int(dy))


def as_tensor(values) -> np.ndarray:
    """Coerce to a float64 2D array and reject non-finite values."""
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"expected a 2D grid, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("tensor contains non-finite values")
    return a


def _require_square(a: np.ndarray, what: str) -> None:
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"{what} requires a square tensor, got {a.shape}")


def transform(t, element: TransformElement) -> np.ndarray:
    """Apply one exact transformation and return a new tensor.

    Point transformations are pure permutations of the values.  The four
    axis-exchanging elements (rot90, rot270, d1, d2) require square input;
    rot180/m1/m2 also accept rectangles.  Translation zero-fills vacated
    cells, so contents shifted past the boundary are lost.
    """
    a = as_tensor(t)
    k = element.kind
    if k == "translate":
        return _translate(a, element.dx, element.dy)
    if k not in _SHAPE_PRESERVING:
        _require_square(a, k)
    if k == "identity":
        return a.copy()
    if k == "rot90":
        return np.ascontiguousarray(np.rot90(a, -1))
    if k == "rot180":
        return np.ascontiguousarray(a[::-1, ::-1])
    if k == "rot270":
        return np.ascontiguousarray(np.rot90(a, 1))
    if k == "reflect-m1":
        return np.ascontiguousarray(a[:, ::-1])
    if k == "reflect-m2":
        return np.ascontiguousarray(a[::-1, :])
    if k == "reflect-d2":
        return np.ascontiguousarray(a.T)
    # reflect-d1: anti-diagonal, out(r, c) = in(N-1-c, N-1-r)
    return np.ascontiguousarray(a[::-1, ::-1].T)


def _translate(a: np.ndarray, dx: int, dy: int) -> np.ndarray:
    h, w = a.shape
    out = np.zeros_like(a)
    nrows = h - abs(dy)
    ncols = w - abs(dx)
    if nrows > 0 and ncols > 0:
        r_dst, r_src = (dy, 0) if dy >= 0 else (0, -dy)
        c_dst, c_src = (dx, 0) if dx >= 0 else (0, -dx)
        out[r_dst:r_dst + nrows, c_dst:c_dst + ncols] = a[r_src:r_src + nrows, c_src:c_src + ncols]
    return out


def inverse(element: TransformElement) -> TransformElement:
    """The element undoing ``element``; rotations pair up, reflections are involutions."""
    if element.kind == "translate":
        return translate(-element.dx, -element.dy)
    if element.kind == "rot90":
        return ROT270
    if element.kind == "rot270":
        return ROT90
    return element


def compose(first: TransformElement, second: TransformElement) -> TransformElement:
    """The single element equal to applying ``first`` then ``second``.

    Defined for point x point (the group is closed) and for pairs of
    translations.  Mixed compositions are not a single element of either
    family and raise ``ValueError``.
    """
    if first.kind == "translate" and second.kind == "translate":
        return translate(first.dx + second.dx, first.dy + second.dy)
    if first.kind == "translate" or second.kind == "translate":
        raise ValueError("cannot compose a translation with a point transformation")
    return _POINT_CAYLEY[(first.kind, second.kind)]


def _build_cayley() -> dict:
    probe = np.arange(9.0).reshape(3, 3)
    images = {e.kind: transform(probe, e) for e in DIH4_ELEMENTS}
    table = {}
    for a in DIH4_ELEMENTS:
        for b in DIH4_ELEMENTS:
            ab = transform(transform(probe, a), b)
            for c in DIH4_ELEMENTS:
                if np.array_equal(ab, images[c.kind]):
                    table[(a.kind, b.kind)] = c
                    break
    return table


_POINT_CAYLEY = _build_cayley()


def rotate_interpolated(t, angle_degrees: float) -> np.ndarray:
    """Rotate about the image center by any angle, with bilinear interpolation.

    Samples falling outside the grid read zero.  The direction matches the
    exact family: a 90 degree interpolated rotation reproduces ``rot90`` up
    to floating-point trigonometry.  For generic angles the result is lossy
    and round trips only approximately.
    """
    a = as_tensor(t)
    _require_square(a, "interpolated rotation")
    n = a.shape[0]
    theta = np.deg2rad(angle_degrees)
    center = (n - 1) / 2.0
    rr, cc = np.meshgrid(np.arange(n, dtype=np.float64), np.arange(n, dtype=np.float64), indexing="ij")
    dr = rr - center
    dc = cc - center
    cos_t = np.cos(theta)
    sin_t = np.sin(theta)
    src_r = cos_t * dr - sin_t * dc + center
    src_c = sin_t * dr + cos_t * dc + center

    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    fr = src_r - r0
    fc = src_c - c0

    def gather(ri, ci):
        ok = (ri >= 0) & (ri < n) & (ci >= 0) & (ci < n)
        v = np.zeros_like(src_r)
        v[ok] = a[ri[ok], ci[ok]]
        return v

    out = (
        gather(r0, c0) * (1.0 - fr) * (1.0 - fc)
        + gather(r0, c0 + 1) * (1.0 - fr) * fc
        + gather(r0 + 1, c0) * fr * (1.0 - fc)
        + gather(r0 + 1, c0 + 1) * fr * fc
    )
    return out


def save_tensor(path, t) -> None:
    """Write the plain-text grid format: a ``"H W"`` header then H rows."""
    a = as_tensor(t)
    h, w = a.shape
    with open(path, "w") as fh:
        fh.write(f"{h} {w}\n")
        for row in a:
            fh.write(" ".join(repr(v) for v in row))
            fh.write("\n")


def load_tensor(path) -> np.ndarray:
    """Read the plain-text grid format written by :func:`save_tensor`."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ShapeError("tensor file must start with an 'H W' header line")
        h, w = int(header[0]), int(header[1])
        rows = []
        for _ in range(h):
            row = [float(v) for v in fh.readline().split()]
            if len(row) != w:
                raise ShapeError(f"expected {w} values per row")
            rows.append(row)
    return as_tensor(rows)


def save_tensor_csv(path, t) -> None:
    """Write comma-separated rows (report-friendly, no header)."""
    a = as_tensor(t)
    with open(path, "w") as fh:
        for row in a:
            fh.write(",".join(repr(v) for v in row))
            fh.write("\n")
