"""Network assembly: layer stacks, shared-weight flatten, and composed pipelines.

A network is one or more pipelines feeding a dense head.  Each pipeline is a
chain of convolution layers (kernel bank, optional 1x1 channel mixing,
activation, optional pooling, in that order) terminated by a flatten stage
implemented as one more inner product per node: every flatten node holds a
kernel the size of the final channel maps and reads the channel-summed map
through it.  Weight sharing on that kernel is what makes the node value
transformation-identical: group sharing for the rotation/reflection family,
line sharing (one weight per line parallel to a translation direction) for
the translation families.

The composed architecture pairs one group-constrained pipeline with four
line-shared pipelines, one per translation direction; their feature banks
are concatenated into an ordinary unshared head, which is precisely where
the individual invariances stop.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ShapeError
from .scan import (
    ScanConfig,
    TIKernel,
    _pair,
    apply_activation,
    conv2d,
    pool,
)
from .symmetry import GROUPS, SymmetryGroup, get_group, ti_residual
from .tensor import as_tensor, transform

LINE_DIRECTIONS = ("y=0", "x=0", "x=y", "x=-y")

MAGIC = b"TICNN1"


@dataclass(frozen=True)
class LayerSpec:
    in_channels: int
    out_channels: int
    kernel_size: int
    group: SymmetryGroup | None
    scan: ScanConfig = field(default_factory=ScanConfig)
    has_1x1: bool = False

    def __post_init__(self):
        if self.kernel_size < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("kernel size and channel counts must be >= 1")


@dataclass
class Layer:
    spec: LayerSpec
    kernels: list[list[TIKernel]]  # [out_channel][in_channel]
    mix: np.ndarray | None = None  # (out, out) when spec.has_1x1


def line_ids(h: int, w: int, line: str) -> np.ndarray:
    """Integer label per cell, constant along lines parallel to ``line``."""
    rr, cc = np.indices((h, w))
    if line == "y=0":
        return rr
    if line == "x=0":
        return cc
    if line == "x=y":
        return rr - cc + (w - 1)
    if line == "x=-y":
        return rr + cc
    raise ValueError(f"line must be one of {LINE_DIRECTIONS}, got {line!r}")


def project_line_shared(weights: np.ndarray, line: str) -> np.ndarray:
    """Replace every cell by the mean of its line (exactly line-constant)."""
    a = as_tensor(weights)
    ids = line_ids(a.shape[0], a.shape[1], line).ravel()
    sums = np.bincount(ids, weights=a.ravel())
    counts = np.bincount(ids)
    means = sums / counts
    return means[ids].reshape(a.shape)


def _line_residual(weights: np.ndarray, line: str) -> float:
    proj = project_line_shared(weights, line)
    return float(np.max(np.abs(weights - proj)))


@dataclass(frozen=True)
class FlattenKernel:
    """Flatten-node kernel sized to the final channel maps.

    ``sharing`` is a :class:`SymmetryGroup`, a line direction string
    (``"y=0"``, ``"x=0"``, ``"x=y"``, ``"x=-y"``), or ``None`` for a fully
    free kernel.  Shared kernels must satisfy their constraint exactly.
    """

    weights: np.ndarray
    sharing: SymmetryGroup | str | None = None

    def __post_init__(self):
        w = as_tensor(self.weights)
        object.__setattr__(self, "weights", w)
        s = self.sharing
        if s is None:
            return
        if isinstance(s, SymmetryGroup):
            if ti_residual(w, s) != 0.0:
                raise ValueError(f"flatten kernel is not exactly {s.kind}-shared")
        elif isinstance(s, str):
            if s not in LINE_DIRECTIONS:
                raise ValueError(f"unknown flatten sharing {s!r}")
            if _line_residual(w, s) != 0.0:
                raise ValueError(f"flatten kernel is not exactly shared along {s}")
        else:
            raise TypeError("sharing must be a SymmetryGroup, a line string, or None")


@dataclass(frozen=True)
class FeatureBank:
    """Flatten-node values of one pipeline."""

    pipeline_id: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise ValueError("feature bank contains non-finite values")
        object.__setattr__(self, "values", v)


@dataclass
class Pipeline:
    layers: list[Layer]
    flatten: list[FlattenKernel]
    flatten_activation: str = "identity"


@dataclass
class Network:
    pipelines: list[Pipeline]
    head: list[np.ndarray]  # chain of (out, in) matrices; empty = banks are the output
    head_activation: str = "tanh"


#: A network whose pipelines follow the one-rotation-plus-four-translation layout.
ComposedNetwork = Network


def _as_channels(input_t, expected: int) -> np.ndarray:
    a = np.asarray(input_t, dtype=np.float64)
    if a.ndim == 2:
        a = a[np.newaxis]
    elif a.ndim != 3:
        chans = [as_tensor(c) for c in input_t]
        a = np.stack(chans)
    if a.shape[0] != expected:
        raise ShapeError(f"network expects {expected} input channel(s), got {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise ValueError("input contains non-finite values")
    return a


def flatten_shared(channels, kernels: list[FlattenKernel], activation: str = "identity",
                   pipeline_id: int = 1) -> FeatureBank:
    """Evaluate the flatten stage: one activated inner product per node.

    Node ``n`` reads ``activation(sum over channels of <channel, K_n>)``.
    With group-shared kernels the node values are invariant when the group
    transform is applied to every channel; with line-shared kernels they are
    invariant under in-frame translations along the declared direction.
    """
    x = np.stack([as_tensor(c) for c in channels]) if not isinstance(channels, np.ndarray) else channels
    if x.ndim == 2:
        x = x[np.newaxis]
    shape = x.shape[1:]
    for kf in kernels:
        if kf.weights.shape != shape:
            raise ShapeError(
                f"flatten kernel shape {kf.weights.shape} does not match channels {shape}")
    chan_sum = x.sum(axis=0)
    pre = np.array([float(np.einsum("ij,ij->", chan_sum, kf.weights)) for kf in kernels])
    return FeatureBank(pipeline_id, apply_activation(pre, activation))


def _layer_forward(layer: Layer, x: np.ndarray, *, allow_nondivisible=False,
                   remedy_padding=False) -> np.ndarray:
    spec = layer.spec
    if x.shape[0] != spec.in_channels:
        raise ShapeError(f"layer expects {spec.in_channels} channels, got {x.shape[0]}")
    outs = []
    for o in range(spec.out_channels):
        acc = conv2d(x[0], layer.kernels[o][0], spec.scan.stride,
                     allow_nondivisible=allow_nondivisible)
        for i in range(1, spec.in_channels):
            acc = acc + conv2d(x[i], layer.kernels[o][i], spec.scan.stride,
                               allow_nondivisible=allow_nondivisible)
        outs.append(acc)
    y = np.stack(outs)
    if layer.mix is not None:
        y = np.einsum("oc,chw->ohw", layer.mix, y)
    y = apply_activation(y, spec.scan.activation)
    if spec.scan.pool_kind != "none":
        y = np.stack([
            pool(y[c], spec.scan.pool_size, spec.scan.pool_kind,
                 allow_nondivisible=allow_nondivisible, remedy_padding=remedy_padding)
            for c in range(y.shape[0])
        ])
    return y


def _pipeline_forward(p: Pipeline, x: np.ndarray, pipeline_id: int,
                      **opts) -> FeatureBank:
    for layer in p.layers:
        x = _layer_forward(layer, x, **opts)
    return flatten_shared(x, p.flatten, p.flatten_activation, pipeline_id)


def _head_forward(net: Network, v: np.ndarray) -> np.ndarray:
    for i, mat in enumerate(net.head):
        v = mat @ v
        if i < len(net.head) - 1:
            v = apply_activation(v, net.head_activation)
    return v


def forward_with_banks(net: Network, input_t, *, allow_nondivisible=False,
                       remedy_padding=False) -> tuple[np.ndarray, list[FeatureBank]]:
    """Full forward pass, also exposing the per-pipeline feature banks."""
    x = _as_channels(input_t, net.pipelines[0].layers[0].spec.in_channels)
    banks = [
        _pipeline_forward(p, x, m + 1, allow_nondivisible=allow_nondivisible,
                          remedy_padding=remedy_padding)
        for m, p in enumerate(net.pipelines)
    ]
    v = np.concatenate([b.values for b in banks])
    return _head_forward(net, v), banks


def forward(net: Network, input_t, *, allow_nondivisible=False,
            remedy_padding=False) -> np.ndarray:
    """Deterministic forward pass returning the output vector."""
    out, _ = forward_with_banks(net, input_t, allow_nondivisible=allow_nondivisible,
                                remedy_padding=remedy_padding)
    return out


forward_composed = forward_with_banks


def invariance_residual(net: Network, input_t, elements, **opts) -> float:
    """max over ``elements`` of the sup-norm output difference vs the identity."""
    base = forward(net, input_t, **opts)
    x = as_tensor(input_t) if np.asarray(input_t).ndim == 2 else input_t
    worst = 0.0
    for e in elements:
        if e.kind == "identity":
            continue
        if isinstance(x, np.ndarray) and x.ndim == 2:
            moved = transform(x, e)
        else:
            moved = [transform(c, e) for c in x]
        d = float(np.max(np.abs(forward(net, moved, **opts) - base)))
        worst = max(worst, d)
    return worst


# ---------------------------------------------------------------------------
# Declarative specs and construction


@dataclass
class FlattenSpec:
    nodes: int
    sharing: str | None  # group name, line direction, or None
    activation: str = "identity"


@dataclass
class PipelineSpec:
    layers: list[LayerSpec]
    flatten: FlattenSpec


@dataclass
class NetworkSpec:
    input_shape: tuple[int, int]
    input_channels: int
    pipelines: list[PipelineSpec]
    head: list[int]
    head_activation: str = "tanh"


def simulate_pipeline_shapes(pspec: PipelineSpec, input_shape, *, strict=True):
    """Channel-map shapes entering each layer and the final flatten shape."""
    h, w = input_shape
    shapes = []
    for ls in pspec.layers:
        shapes.append((h, w))
        k = ls.kernel_size
        sv, sh = _pair(ls.scan.stride)
        if h < k or w < k:
            raise ShapeError(f"map {h}x{w} smaller than kernel {k}")
        if strict and ((h - k) % sv or (w - k) % sh):
            raise ConfigurationError(
                f"stride {ls.scan.stride} does not divide map {h}x{w} with kernel {k}")
        h = (h - k) // sv + 1
        w = (w - k) // sh + 1
        if ls.scan.pool_kind != "none":
            pv, ph = _pair(ls.scan.pool_size)
            if strict and (h % pv or w % ph):
                raise ConfigurationError(
                    f"pool {ls.scan.pool_size} does not divide map {h}x{w}")
            h //= pv
            w //= ph
    return shapes, (h, w)


def _resolve_sharing(sharing: str | None):
    if sharing is None or sharing == "none":
        return None
    if sharing in GROUPS:
        return get_group(sharing)
    if sharing in LINE_DIRECTIONS:
        return sharing
    raise ConfigurationError(f"unknown flatten sharing {sharing!r}")


def build_network(spec: NetworkSpec, seed: int, *, strict_shapes: bool = True) -> Network:
    """Materialise a network with freshly initialised weights.

    Kernel weights start uniform in ``[-r, r]`` with ``r = 1/(k*sqrt(fan_in
    channels))`` and are then projected onto their sharing constraint, so all
    invariants hold exactly from the first forward pass.  Deterministic in
    ``seed``.
    """
    from .training import init_ti  # local import to avoid a module cycle

    rng = np.random.default_rng(seed)
    pipelines = []
    for pspec in spec.pipelines:
        if pspec.layers[0].in_channels != spec.input_channels:
            raise ConfigurationError("first layer must consume the network input channels")
        _, final = simulate_pipeline_shapes(pspec, spec.input_shape, strict=strict_shapes)
        layers = []
        for ls in pspec.layers:
            kernels = [
                [
                    init_ti(ls.kernel_size, ls.group,
                            int(rng.integers(0, 2**63 - 1)), channels=ls.in_channels)
                    for _ in range(ls.in_channels)
                ]
                for _ in range(ls.out_channels)
            ]
            mix = None
            if ls.has_1x1:
                r = 1.0 / np.sqrt(ls.out_channels)
                mix = rng.uniform(-r, r, size=(ls.out_channels, ls.out_channels))
            layers.append(Layer(ls, kernels, mix))
        fh, fw = final
        sharing = _resolve_sharing(pspec.flatten.sharing)
        n_ch = pspec.layers[-1].out_channels
        r = 1.0 / (max(fh, fw) * np.sqrt(max(1, n_ch)))
        flat = []
        for _ in range(pspec.flatten.nodes):
            w0 = rng.uniform(-r, r, size=(fh, fw))
            if isinstance(sharing, SymmetryGroup):
                from .symmetry import _symmetrize_hw
                if fh != fw and any(e.kind in ("rot90", "rot270", "reflect-d1", "reflect-d2")
                                    for e in sharing.elements):
                    raise ConfigurationError(
                        f"{sharing.kind} flatten sharing needs a square final map, got {fh}x{fw}")
                w0 = _symmetrize_hw(w0, sharing, "average")
            elif isinstance(sharing, str):
                w0 = project_line_shared(w0, sharing)
            flat.append(FlattenKernel(w0, sharing))
        pipelines.append(Pipeline(layers, flat, pspec.flatten.activation))

    sizes = [sum(p.flatten.nodes for p in spec.pipelines)] + list(spec.head)
    head = []
    for i in range(1, len(sizes)):
        r = 1.0 / np.sqrt(sizes[i - 1])
        head.append(rng.uniform(-r, r, size=(sizes[i], sizes[i - 1])))
    return Network(pipelines, head, spec.head_activation)


def build_composed(spec: NetworkSpec, seed: int) -> ComposedNetwork:
    """Build the five-pipeline composed network and validate its sharing layout.

    Exactly one pipeline must be dih4-constrained end to end (kernels and
    flatten) and the other four must use unconstrained kernels with flatten
    sharing along the four translation directions, one direction each.
    """
    if len(spec.pipelines) != 5:
        raise ConfigurationError("composed network requires exactly 5 pipelines")
    group_ids = []
    lines = []
    for idx, p in enumerate(spec.pipelines):
        sharing = p.flatten.sharing
        if sharing == "dih4":
            if any(ls.group is None or ls.group.kind != "dih4" for ls in p.layers):
                raise ConfigurationError("the dih4 pipeline must constrain every kernel to dih4")
            group_ids.append(idx)
        elif sharing in LINE_DIRECTIONS:
            if any(ls.group is not None for ls in p.layers):
                raise ConfigurationError("translation pipelines must use unconstrained kernels")
            lines.append(sharing)
        else:
            raise ConfigurationError(f"pipeline {idx}: sharing {sharing!r} not allowed here")
    if len(group_ids) != 1 or sorted(lines) != sorted(LINE_DIRECTIONS):
        raise ConfigurationError(
            "composed network needs one dih4 pipeline and the four line directions exactly once each")
    return build_network(spec, seed)


# ---------------------------------------------------------------------------
# Weight serialization: magic "TICNN1", then little-endian float64 arrays in
# structural order, each preceded by its uint32 element count.


def _weight_arrays(net: Network):
    for p in net.pipelines:
        for layer in p.layers:
            for row in layer.kernels:
                for kern in row:
                    yield kern.weights
            if layer.mix is not None:
                yield layer.mix
        for kf in p.flatten:
            yield kf.weights
    for mat in net.head:
        yield mat


def save_weights(net: Network, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for arr in _weight_arrays(net):
            flat = np.ascontiguousarray(arr, dtype="<f8").ravel()
            fh.write(struct.pack("<I", flat.size))
            fh.write(flat.tobytes())


def load_weights(net: Network, path) -> Network:
    """Read weights saved by :func:`save_weights` into a copy of ``net``.

    The file must carry exactly the arrays the network's structure implies,
    in order; shared kernels are re-validated on construction.
    """
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ConfigurationError("bad magic: not a weight container")

        def read_array(shape):
            n = int(np.prod(shape))
            (count,) = struct.unpack("<I", fh.read(4))
            if count != n:
                raise ConfigurationError(f"array length {count} does not match expected {n}")
            data = np.frombuffer(fh.read(8 * n), dtype="<f8").astype(np.float64)
            return data.reshape(shape)

        pipelines = []
        for p in net.pipelines:
            layers = []
            for layer in p.layers:
                kernels = [
                    [TIKernel(read_array(k.weights.shape), k.group) for k in row]
                    for row in layer.kernels
                ]
                mix = read_array(layer.mix.shape) if layer.mix is not None else None
                layers.append(Layer(layer.spec, kernels, mix))
            flat = [FlattenKernel(read_array(kf.weights.shape), kf.sharing) for kf in p.flatten]
            pipelines.append(Pipeline(layers, flat, p.flatten_activation))
        head = [read_array(m.shape) for m in net.head]
        if fh.read(1):
            raise ConfigurationError("trailing bytes after expected weight arrays")
    return Network(pipelines, head, net.head_activation)
