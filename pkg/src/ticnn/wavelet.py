"""Single-level separable 2D wavelet decomposition as a symmetry front-end.

Phase conventions (these matter and are part of the contract):

* boundary handling is periodic (circular indexing);
* downsampling keeps even-indexed outputs;
* analysis is correlation-style, ``y[n] = sum_k f[k] * x[(2n + k - anchor) mod N]``,
  with the scaling filter anchored on the even sample ``2n`` and the wavelet
  filter anchored so its center tap sits on the following odd sample.

Compartment naming: the first letter is the filter applied horizontally
(within rows), the second vertically, so ``lh`` is horizontally smoothed and
vertically differenced.  With even-length filters the half-sample symmetry
center makes every point transformation map the downsampling grid onto
itself, so compartments transform with no index shift (possibly with a sign
and with lh/hl exchanging under rotations).  Odd-length filters sit on a
sample, and reflections land on the opposite downsampling phase: their
transform relations hold only after a one-sample circular pre-shift of the
input.  Tests pin both behaviours numerically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ClassificationError, ShapeError
from .scan import TIKernel, conv2d
from .symmetry import C2, DIH4, SymmetryGroup
from .tensor import as_tensor


def detect_symmetry(coeffs) -> str:
    c = np.asarray(coeffs, dtype=np.float64)
    rev = c[::-1]
    if np.array_equal(c, rev):
        return "symmetric"
    if np.array_equal(c, -rev):
        return "antisymmetric"
    return "neither"


@dataclass(frozen=True)
class WaveletFilterPair:
    """One analysis (or synthesis) filter bank: scaling + wavelet coefficients."""

    scaling: np.ndarray
    wavelet: np.ndarray
    scaling_symmetry: str
    wavelet_symmetry: str
    scaling_anchor: int
    wavelet_anchor: int
    name: str = ""

    def __post_init__(self):
        s = np.asarray(self.scaling, dtype=np.float64)
        w = np.asarray(self.wavelet, dtype=np.float64)
        object.__setattr__(self, "scaling", s)
        object.__setattr__(self, "wavelet", w)
        for tag, coeffs in ((self.scaling_symmetry, s), (self.wavelet_symmetry, w)):
            if tag not in ("symmetric", "antisymmetric", "neither"):
                raise ValueError(f"unknown symmetry tag {tag!r}")
            if tag != "neither" and detect_symmetry(coeffs) != tag:
                raise ValueError(f"coefficients do not match declared tag {tag!r}")


def make_filter_pair(scaling, wavelet, scaling_anchor: int | None = None,
                     wavelet_anchor: int | None = None, name: str = "") -> WaveletFilterPair:
    """Build a pair with auto-detected symmetry tags and default anchors."""
    s = np.asarray(scaling, dtype=np.float64)
    w = np.asarray(wavelet, dtype=np.float64)
    if scaling_anchor is None:
        scaling_anchor = (len(s) - 1) // 2
    if wavelet_anchor is None:
        wavelet_anchor = (len(w) - 1) // 2 - 1 if len(w) % 2 else (len(w) - 1) // 2
    return WaveletFilterPair(s, w, detect_symmetry(s), detect_symmetry(w),
                             int(scaling_anchor), int(wavelet_anchor), name)


_SQRT2 = float(np.sqrt(2.0))


def haar() -> WaveletFilterPair:
    """Orthogonal two-tap pair; also its own synthesis pair."""
    return make_filter_pair([1 / _SQRT2, 1 / _SQRT2], [1 / _SQRT2, -1 / _SQRT2], name="haar")


def cdf53() -> WaveletFilterPair:
    """Biorthogonal 5/3 analysis pair (odd, symmetric on both filters)."""
    return make_filter_pair([-0.125, 0.25, 0.75, 0.25, -0.125], [-0.5, 1.0, -0.5], name="cdf53")


def cdf53_synthesis() -> WaveletFilterPair:
    return WaveletFilterPair(
        np.array([0.5, 1.0, 0.5]), np.array([-0.125, -0.25, 0.75, -0.25, -0.125]),
        "symmetric", "symmetric", 1, 1, name="cdf53-synthesis")


def synthesis_pair(analysis: WaveletFilterPair) -> WaveletFilterPair:
    """The reconstruction pair dual to a shipped analysis pair."""
    if analysis.name == "haar":
        return analysis
    if analysis.name == "cdf53":
        return cdf53_synthesis()
    raise ValueError(f"no known synthesis dual for filter pair {analysis.name!r}")


@dataclass(frozen=True)
class Decomposition:
    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray

    def __post_init__(self):
        shape = self.ll.shape
        for c in (self.lh, self.hl, self.hh):
            if c.shape != shape:
                raise ShapeError("compartments must share one shape")

    def as_dict(self):
        return {"ll": self.ll, "lh": self.lh, "hl": self.hl, "hh": self.hh}


def _analyze_axis(a: np.ndarray, f: np.ndarray, anchor: int, axis: int) -> np.ndarray:
    acc = np.zeros_like(a)
    for k in range(len(f)):
        acc += f[k] * np.roll(a, anchor - k, axis=axis)
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(0, None, 2)
    return acc[tuple(sl)]


def _synthesize_axis(lo: np.ndarray, hi: np.ndarray, pair: WaveletFilterPair,
                     axis: int) -> np.ndarray:
    n = lo.shape[axis] * 2
    shape = list(lo.shape)
    shape[axis] = n
    out = np.zeros(shape)
    for coef, f, anchor in ((lo, pair.scaling, pair.scaling_anchor),
                            (hi, pair.wavelet, pair.wavelet_anchor)):
        up = np.zeros(shape)
        sl = [slice(None)] * lo.ndim
        sl[axis] = slice(0, None, 2)
        up[tuple(sl)] = coef
        for k in range(len(f)):
            out += f[k] * np.roll(up, k - anchor, axis=axis)
    return out


def dwt2d(input_t, filters: WaveletFilterPair) -> Decomposition:
    """One analysis level: rows first, then columns, periodic extension."""
    a = as_tensor(input_t)
    n = a.shape[0]
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"decomposition requires square input, got {a.shape}")
    if n % 2:
        raise ShapeError(f"input side must be even, got {n}")
    if n < max(len(filters.scaling), len(filters.wavelet)):
        raise ShapeError("input side smaller than filter length")
    lo = _analyze_axis(a, filters.scaling, filters.scaling_anchor, axis=1)
    hi = _analyze_axis(a, filters.wavelet, filters.wavelet_anchor, axis=1)
    return Decomposition(
        ll=_analyze_axis(lo, filters.scaling, filters.scaling_anchor, axis=0),
        lh=_analyze_axis(lo, filters.wavelet, filters.wavelet_anchor, axis=0),
        hl=_analyze_axis(hi, filters.scaling, filters.scaling_anchor, axis=0),
        hh=_analyze_axis(hi, filters.wavelet, filters.wavelet_anchor, axis=0),
    )


def idwt2d(dec: Decomposition, synthesis: WaveletFilterPair) -> np.ndarray:
    """Inverse of :func:`dwt2d` given the matching synthesis pair."""
    lo = _synthesize_axis(dec.ll, dec.lh, synthesis, axis=0)
    hi = _synthesize_axis(dec.hl, dec.hh, synthesis, axis=0)
    return _synthesize_axis(lo, hi, synthesis, axis=1)


def classify_compartment_symmetry(filters: WaveletFilterPair) -> dict[str, SymmetryGroup]:
    """Symmetry class each compartment supports downstream.

    A symmetric wavelet filter keeps the full rotation/reflection family
    available in all four compartments; an antisymmetric one (the even-length
    case) demotes the mixed compartments to 180-degree identity, carried up
    to a sign that downstream processing must absorb (see
    :func:`reflection_fix`).
    """
    if filters.scaling_symmetry != "symmetric":
        raise ClassificationError("scaling filter must be symmetric to classify")
    if filters.wavelet_symmetry == "symmetric":
        return {"ll": DIH4, "lh": DIH4, "hl": DIH4, "hh": DIH4}
    if filters.wavelet_symmetry == "antisymmetric":
        return {"ll": DIH4, "hh": DIH4, "lh": C2, "hl": C2}
    raise ClassificationError("wavelet filter is neither symmetric nor antisymmetric")


# Fixed 3x3 fix-up kernels: each is invariant under the reflection that its
# compartment already supports and antisymmetric under the complementary
# one, which cancels the sign the compartment picks up there.  The pair maps
# onto itself under rotations, restoring clean channel-exchange behaviour.
FIX_LH = np.array([[1.0, 2.0, 1.0], [0.0, 0.0, 0.0], [-1.0, -2.0, -1.0]]) / 4.0
FIX_HL = FIX_LH.T.copy()


def reflection_fix(lh, hl) -> tuple[np.ndarray, np.ndarray]:
    """Convolve the mixed compartments with fixed reflection-invariant kernels.

    After the fix the pair transforms exactly like a rotation/reflection
    channel pair (exchanging under 90-degree rotations, no sign flips), so a
    fully constrained downstream network keeps its end-to-end identity.
    Valid-mode convolution: each output side shrinks by two.
    """
    a = as_tensor(lh)
    b = as_tensor(hl)
    if a.shape != b.shape:
        raise ShapeError(f"compartment shapes differ: {a.shape} vs {b.shape}")
    return (conv2d(a, TIKernel(FIX_LH, None), 1),
            conv2d(b, TIKernel(FIX_HL, None), 1))
