"""YAML-backed structured-text configuration shared by networks and experiments."""

from __future__ import annotations

import yaml

from .errors import ConfigurationError
from .network import FlattenSpec, LayerSpec, NetworkSpec, PipelineSpec
from .scan import ScanConfig
from .symmetry import GROUPS, get_group
from .training import TrainConfig
from .wavelet import WaveletFilterPair, make_filter_pair


def load_config(path) -> dict:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError("config root must be a mapping")
    return data


def _parse_group(tag):
    if tag in (None, "none"):
        return None
    if tag in GROUPS:
        return get_group(tag)
    raise ConfigurationError(f"unknown group tag {tag!r}")


def _parse_stride_or_pool(v):
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise ConfigurationError(f"expected [vertical, horizontal], got {v!r}")
        return (int(v[0]), int(v[1]))
    return int(v)


def parse_layer(d: dict, in_channels: int) -> LayerSpec:
    try:
        scan = ScanConfig(
            stride=_parse_stride_or_pool(d.get("stride", 1)),
            pool_size=_parse_stride_or_pool(d.get("pool", 1)),
            pool_kind=d.get("pool_kind", "none" if d.get("pool", 1) in (1, [1, 1]) else "max"),
            activation=d.get("activation", "identity"),
        )
        return LayerSpec(
            in_channels=in_channels,
            out_channels=int(d["out_channels"]),
            kernel_size=int(d["kernel_size"]),
            group=_parse_group(d.get("group")),
            scan=scan,
            has_1x1=bool(d.get("has_1x1", False)),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigurationError(f"bad layer entry {d!r}: {exc}") from exc


def parse_pipeline(d: dict, in_channels: int) -> PipelineSpec:
    layers = []
    for entry in d.get("layers", []):
        layer = parse_layer(entry, in_channels)
        in_channels = layer.out_channels
        layers.append(layer)
    if not layers:
        raise ConfigurationError("pipeline needs at least one layer")
    f = d.get("flatten", {})
    flatten = FlattenSpec(
        nodes=int(f.get("nodes", 1)),
        sharing=f.get("sharing"),
        activation=f.get("activation", "identity"),
    )
    return PipelineSpec(layers, flatten)


def parse_network_spec(d: dict) -> NetworkSpec:
    if "input_shape" in d:
        shape = tuple(int(v) for v in d["input_shape"])
    elif "input_side" in d:
        side = int(d["input_side"])
        shape = (side, side)
    else:
        raise ConfigurationError("network spec needs input_side or input_shape")
    channels = int(d.get("input_channels", 1))
    multiplier = int(d.get("channel_multiplier", 1))
    if multiplier < 1:
        raise ConfigurationError("channel_multiplier must be >= 1")
    if "pipelines" in d:
        raw = d["pipelines"]
    else:
        raw = [{"layers": d.get("layers", []), "flatten": d.get("flatten", {})}]
    pipelines = [parse_pipeline(p, channels) for p in raw]
    if multiplier > 1:
        pipelines = [_scale_channels(p, channels, multiplier) for p in pipelines]
    head = [int(v) for v in d.get("head", [])]
    return NetworkSpec(shape, channels, pipelines, head, d.get("head_activation", "tanh"))


def _scale_channels(p: PipelineSpec, input_channels: int, mult: int) -> PipelineSpec:
    """Widen every layer by the compensation multiplier (input width fixed)."""
    layers = []
    prev = input_channels
    for ls in p.layers:
        out = ls.out_channels * mult
        layers.append(LayerSpec(prev, out, ls.kernel_size, ls.group, ls.scan, ls.has_1x1))
        prev = out
    return PipelineSpec(layers, p.flatten)


def parse_train_config(d: dict) -> TrainConfig:
    try:
        return TrainConfig(
            learning_rate=float(d.get("learning_rate", 0.1)),
            epochs=int(d.get("epochs", 10)),
            batch_size=int(d.get("batch_size", 8)),
            update_mode=d.get("update_mode", "average"),
            loss=d.get("loss", "mse"),
            seed=int(d.get("seed", 0)),
            momentum=float(d.get("momentum", 0.0)),
        )
    except ValueError as exc:
        raise ConfigurationError(f"bad training config: {exc}") from exc


def parse_filter_pair(d: dict) -> WaveletFilterPair:
    try:
        return make_filter_pair(
            d["scaling"], d["wavelet"],
            scaling_anchor=d.get("scaling_anchor"),
            wavelet_anchor=d.get("wavelet_anchor"),
            name=d.get("name", "custom"),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigurationError(f"bad filter pair: {exc}") from exc
