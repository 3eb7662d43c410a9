"""Scan operations: convolution, activation, pooling, channel mixing, filtering.

Convolution is correlation-style (no kernel flip) and valid-mode only: there
is no implicit zero padding, and a stride must evenly divide the scanned
extent or the call is rejected.  Silent divisibility violations are exactly
the failure mode that destroys transformation identity, so they are hard
errors here, with explicit escape hatches (``allow_nondivisible`` truncates
like a conventional implementation, ``remedy_padding`` zero-pads both sides
equally to restore symmetric coverage).

The grouped inner product evaluates a symmetric-kernel window with one
multiply per orbit: members of each orbit are summed first (canonical
row-major order of the untransformed grid) and multiplied by the shared
weight once.  This bounds but does not eliminate reassociation noise, hence
the 1e-12 agreement tolerance against the plain inner product rather than
bit equality.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DivisibilityError, ShapeError
from .symmetry import SymmetryGroup, _orbits_hw, is_ti
from .tensor import as_tensor

#: Groups with a dedicated grouped inner-product path.  Other groups fall
#: back to the plain product (still correct, one multiply per cell).
GROUPED_KINDS = ("dih4", "c4")

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")
POOL_KINDS = ("max", "average", "none")


@dataclass(frozen=True)
class TIKernel:
    """A square kernel, optionally constrained to a symmetry group.

    When ``group`` is set the weights must satisfy the invariance exactly at
    construction; updates that preserve it produce new instances.  An
    unconstrained kernel (``group=None``) carries k*k free parameters.
    """

    weights: np.ndarray
    group: SymmetryGroup | None = None

    def __post_init__(self):
        w = as_tensor(self.weights)
        if w.shape[0] != w.shape[1]:
            raise ShapeError(f"kernel must be square, got {w.shape}")
        object.__setattr__(self, "weights", w)
        if self.group is not None and not is_ti(w, self.group, 0.0):
            raise ValueError(f"kernel is not exactly invariant under {self.group.kind}")

    @property
    def side(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class ScanConfig:
    """Per-layer scan parameters: stride, pooling, and activation."""

    stride: int | tuple[int, int] = 1
    pool_size: int | tuple[int, int] = 1
    pool_kind: str = "none"
    activation: str = "identity"

    def __post_init__(self):
        sv, sh = _pair(self.stride)
        pv, ph = _pair(self.pool_size)
        if min(sv, sh) < 1 or min(pv, ph) < 1:
            raise ValueError("stride and pool size must be >= 1")
        if self.pool_kind not in POOL_KINDS:
            raise ValueError(f"pool_kind must be one of {POOL_KINDS}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise ValueError(f"expected (vertical, horizontal) pair, got {v!r}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _use_grouped(kernel: TIKernel) -> bool:
    return kernel.group is not None and kernel.group.kind in GROUPED_KINDS


def ti_inner_product(region, kernel: TIKernel) -> float:
    """Inner product of a window with a kernel, grouped over weight orbits."""
    a = as_tensor(region)
    k = kernel.side
    if a.shape != (k, k):
        raise ShapeError(f"region shape {a.shape} does not match kernel side {k}")
    w = kernel.weights
    if not _use_grouped(kernel):
        return float(np.einsum("ij,ij->", a, w))
    total = 0.0
    for orbit in _orbits_hw(kernel.group.kind, k, k):
        s = 0.0
        for (r, c) in orbit:
            s += a[r, c]
        total += s * w[orbit[0]]
    return float(total)


def conv2d(input_t, kernel: TIKernel, stride: int | tuple[int, int] = 1,
           *, allow_nondivisible: bool = False) -> np.ndarray:
    """Valid-mode strided correlation with a (possibly constrained) kernel.

    The output side along each axis is ``(extent - k) / stride + 1`` and must
    be a positive integer; a stride that does not divide the scanned extent
    raises :class:`DivisibilityError` unless explicitly overridden (in which
    case trailing rows/columns are silently never scanned, reproducing the
    conventional floor behaviour).
    """
    a = as_tensor(input_t)
    k = kernel.side
    sv, sh = _pair(stride)
    h, w = a.shape
    if h < k or w < k:
        raise ShapeError(f"input {a.shape} smaller than kernel side {k}")
    if not allow_nondivisible:
        bad = []
        if (h - k) % sv:
            bad.append(f"rows: ({h}-{k}) % {sv} != 0")
        if (w - k) % sh:
            bad.append(f"cols: ({w}-{k}) % {sh} != 0")
        if bad:
            raise DivisibilityError(
                "stride does not evenly divide the scanned extent (" + "; ".join(bad) + ")")
    windows = sliding_window_view(a, (k, k))[::sv, ::sh]
    wts = kernel.weights
    if not _use_grouped(kernel):
        return np.einsum("ijuv,uv->ij", windows, wts)
    out = np.zeros(windows.shape[:2])
    for orbit in _orbits_hw(kernel.group.kind, k, k):
        s = np.zeros_like(out)
        for (r, c) in orbit:
            s += windows[:, :, r, c]
        out += s * wts[orbit[0]]
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def apply_activation(t, kind: str) -> np.ndarray:
    """Elementwise nonlinearity; commutes exactly with every value permutation."""
    a = np.asarray(t, dtype=np.float64)
    if kind == "identity":
        return a.copy()
    if kind == "relu":
        return np.maximum(a, 0.0)
    if kind == "tanh":
        return np.tanh(a)
    if kind == "sigmoid":
        return _sigmoid(a)
    raise ValueError(f"unknown activation {kind!r}")


def activation_derivative(kind: str, pre: np.ndarray) -> np.ndarray:
    """Derivative of the activation, evaluated at the pre-activation values."""
    if kind == "identity":
        return np.ones_like(pre)
    if kind == "relu":
        return (pre > 0).astype(np.float64)
    if kind == "tanh":
        th = np.tanh(pre)
        return 1.0 - th * th
    if kind == "sigmoid":
        s = _sigmoid(pre)
        return s * (1.0 - s)
    raise ValueError(f"unknown activation {kind!r}")


def pool(t, size: int | tuple[int, int], kind: str,
         *, allow_nondivisible: bool = False, remedy_padding: bool = False) -> np.ndarray:
    """Non-overlapping block pooling by max or mean.

    The block size must evenly divide both tensor extents.  ``remedy_padding``
    zero-pads both sides of each offending axis equally before pooling (the
    padding must split evenly or the call still fails); ``allow_nondivisible``
    instead truncates trailing rows/columns, which is the conventional
    behaviour that silently breaks transformation identity.
    """
    a = as_tensor(t)
    if kind == "none":
        return a.copy()
    if kind not in ("max", "average"):
        raise ValueError(f"pool kind must be one of {POOL_KINDS}")
    pv, ph = _pair(size)
    h, w = a.shape
    rem_v, rem_h = h % pv, w % ph
    if (rem_v or rem_h) and remedy_padding:
        pad_v = (pv - rem_v) % pv
        pad_h = (ph - rem_h) % ph
        if pad_v % 2 or pad_h % 2:
            raise DivisibilityError(
                f"pool {pv}x{ph} on {a.shape} cannot be zero-padded symmetrically")
        a = np.pad(a, ((pad_v // 2, pad_v // 2), (pad_h // 2, pad_h // 2)))
        h, w = a.shape
    elif rem_v or rem_h:
        if not allow_nondivisible:
            raise DivisibilityError(
                f"pool size {pv}x{ph} does not evenly divide tensor {a.shape}")
        h -= rem_v
        w -= rem_h
        a = a[:h, :w]
    blocks = a.reshape(h // pv, pv, w // ph, ph)
    if kind == "max":
        return blocks.max(axis=(1, 3))
    return blocks.mean(axis=(1, 3))


def cross_channel_1x1(channels, weights) -> list[np.ndarray]:
    """Positionwise linear mixing across channels (1x1 convolution)."""
    chans = [as_tensor(c) for c in channels]
    shape = chans[0].shape
    for c in chans[1:]:
        if c.shape != shape:
            raise ShapeError(f"channel shapes differ: {shape} vs {c.shape}")
    x = np.stack(chans)
    wm = np.asarray(weights, dtype=np.float64)
    if wm.ndim == 1:
        wm = wm[np.newaxis, :]
    if wm.shape[1] != x.shape[0]:
        raise ShapeError(
            f"mix matrix expects {wm.shape[1]} input channels, got {x.shape[0]}")
    out = np.einsum("oc,chw->ohw", wm, x)
    return [out[i] for i in range(out.shape[0])]


def minmax_filter(t, k: int, kind: str) -> np.ndarray:
    """Sliding-window min or max with a flat k x k structuring element.

    A non-convolution scan operator: with the flat element the operation
    commutes with every point transformation exactly, since comparisons
    involve no arithmetic.  Valid-mode like the convolution.
    """
    a = as_tensor(t)
    if kind not in ("min", "max"):
        raise ValueError("kind must be 'min' or 'max'")
    if k > min(a.shape):
        raise ShapeError(f"window {k} exceeds tensor extent {a.shape}")
    windows = sliding_window_view(a, (k, k))
    return windows.max(axis=(2, 3)) if kind == "max" else windows.min(axis=(2, 3))


def pad_for_translation(t, direction: str, max_shift: int) -> np.ndarray:
    """Zero padding that keeps shifted content inside the scanned frame.

    Horizontal and vertical directions extend only along the translation
    axis, by ``max_shift`` on each side; the diagonal directions extend the
    whole frame on all four sides.
    """
    a = as_tensor(t)
    m = int(max_shift)
    if m < 0:
        raise ValueError("max_shift must be >= 0")
    if direction == "h":
        return np.pad(a, ((0, 0), (m, m)))
    if direction == "v":
        return np.pad(a, ((m, m), (0, 0)))
    if direction in ("d45", "d135"):
        return np.pad(a, ((m, m), (m, m)))
    raise ValueError(f"direction must be one of h, v, d45, d135; got {direction!r}")


def validate_divisibility(layer_sizes, stride: int, pool: int, shift: int) -> bool:
    """Check the translation-compatibility rule layer by layer.

    At every layer the incoming extent must divide by the stride and then by
    the pool size, and the shift visible at that layer must be a multiple of
    ``stride * pool``.  The shift shrinks by that factor per layer.
    """
    stride, pool, shift = int(stride), int(pool), abs(int(shift))
    if stride < 1 or pool < 1:
        raise ValueError("stride and pool must be >= 1")
    for s in layer_sizes:
        s = int(s)
        if s % stride or (s // stride) % pool:
            return False
        if shift % (stride * pool):
            return False
        shift //= stride * pool
    return True
