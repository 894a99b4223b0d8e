"""Model graphs: a small feedforward CNN and DenseNet-121.

A model is an explicit list of named layers. Each layer names the layers
it consumes, which makes dense connectivity (every layer in a block
feeding every later one through channel concatenation) a plain wiring
fact rather than executor magic, and gives Grad-CAM stable layer names
to tap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter
from .tensor import ShapeError, Tensor


class UnknownLayerError(ValueError):
    """A layer name that does not exist in the model graph."""


@dataclass(frozen=True)
class LayerSpec:
    """One layer: a unique name, an operation kind, and its input wiring."""

    name: str
    kind: str  # conv | bn | activation | pool | global-pool | linear | concat-group
    inputs: tuple[str, ...]
    attrs: Mapping[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class BaselineCnnConfig:
    in_channels: int = 1
    input_hw: int = 32
    filters: tuple[int, ...] = (16, 32, 64)
    classes: int = 2

    def __post_init__(self):
        if self.in_channels not in (1, 3):
            raise ValueError(f"in_channels must be 1 or 3, got {self.in_channels}")
        if not self.filters:
            raise ValueError("need at least one conv block")
        # each block halves the spatial extent, so the input must divide out
        if self.input_hw % (2 ** len(self.filters)) != 0 or self.input_hw < 2 ** len(self.filters):
            raise ValueError(
                f"input_hw {self.input_hw} not divisible by 2^{len(self.filters)} pooled blocks"
            )


@dataclass(frozen=True)
class DenseNetConfig:
    in_channels: int = 3
    input_hw: int = 224
    growth_rate: int = 32
    stem_channels: int = 64
    block_sizes: tuple[int, ...] = (6, 12, 24, 16)
    compression: float = 0.5
    classes: int = 2

    def __post_init__(self):
        if self.growth_rate < 1 or self.stem_channels < 1:
            raise ValueError("growth_rate and stem_channels must be >= 1")
        if not self.block_sizes:
            raise ValueError("need at least one dense block")
        if not 0.0 < self.compression <= 1.0:
            raise ValueError(f"compression must lie in (0, 1], got {self.compression}")


class ModelGraph:
    """An ordered layer graph plus its parameter store."""

    def __init__(self, kind: str, input_shape: tuple[int, int, int], config: dict[str, str]):
        self.kind = kind
        self.input_shape = input_shape
        self.layers: list[LayerSpec] = []
        self.params: dict[str, Parameter] = {}
        self.config = dict(config)
        self.extra_metadata: dict[str, str] = {}
        self.default_tap = ""

    def add_layer(self, spec: LayerSpec) -> None:
        if spec.name == "input" or any(l.name == spec.name for l in self.layers):
            raise ValueError(f"duplicate layer name {spec.name!r}")
        known = {"input"} | {l.name for l in self.layers}
        for src in spec.inputs:
            if src not in known:
                raise ValueError(f"layer {spec.name!r} consumes unknown layer {src!r}")
        self.layers.append(spec)

    def add_param(self, name: str, value: Tensor, trainable: bool = True) -> Parameter:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(name, value, trainable)
        self.params[name] = p
        return p

    def get_layer(self, name: str) -> LayerSpec:
        for l in self.layers:
            if l.name == name:
                return l
        raise UnknownLayerError(f"unknown layer {name!r}; valid layers: {', '.join(self.layer_names())}")

    def layer_names(self) -> list[str]:
        return [l.name for l in self.layers]

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.params.values() if p.trainable]

    def num_parameters(self, trainable_only: bool = True) -> int:
        return sum(p.value.size for p in self.params.values() if p.trainable or not trainable_only)

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def __repr__(self) -> str:
        return f"ModelGraph(kind={self.kind!r}, layers={len(self.layers)}, params={self.num_parameters()})"


# ---------------------------------------------------------------------------
# construction helpers


def _he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    std = float(np.sqrt(2.0 / fan_in))
    return Tensor(rng.normal(0.0, std, size=shape).astype(np.float32))


def _add_conv(model: ModelGraph, rng, name: str, src: str, cin: int, cout: int, k: int, stride: int, padding: int) -> None:
    model.add_layer(LayerSpec(name, "conv", (src,), {"in_channels": cin, "out_channels": cout, "k": k, "stride": stride, "padding": padding}))
    model.add_param(f"{name}.weight", _he_normal(rng, (cout, cin, k, k), cin * k * k))
    model.add_param(f"{name}.bias", Tensor.zeros((cout,)))


def _add_bn(model: ModelGraph, name: str, src: str, channels: int) -> None:
    model.add_layer(LayerSpec(name, "bn", (src,), {"channels": channels}))
    model.add_param(f"{name}.gamma", Tensor.full((channels,), 1.0))
    model.add_param(f"{name}.beta", Tensor.zeros((channels,)))
    model.add_param(f"{name}.running_mean", Tensor.zeros((channels,)), trainable=False)
    model.add_param(f"{name}.running_var", Tensor.full((channels,), 1.0), trainable=False)


def _add_linear(model: ModelGraph, rng, name: str, src: str, fin: int, fout: int) -> None:
    model.add_layer(LayerSpec(name, "linear", (src,), {"in_features": fin, "out_features": fout}))
    model.add_param(f"{name}.weight", _he_normal(rng, (fout, fin), fin))
    model.add_param(f"{name}.bias", Tensor.zeros((fout,)))


def build_baseline_cnn(config: BaselineCnnConfig | None = None, init_seed: int = 0) -> ModelGraph:
    """Stacked conv3x3 -> relu -> maxpool2 blocks, then one FC classifier."""
    cfg = config or BaselineCnnConfig()
    if cfg.in_channels not in (1, 3):
        raise ValueError(f"in_channels must be 1 or 3, got {cfg.in_channels}")
    if cfg.classes < 2:
        raise ValueError(f"classes must be >= 2, got {cfg.classes}")
    if not cfg.filters or any(f < 1 for f in cfg.filters):
        raise ValueError(f"filters must be positive, got {cfg.filters}")
    model = ModelGraph(
        "baseline",
        (cfg.in_channels, cfg.input_hw, cfg.input_hw),
        {
            "arch": "baseline",
            "in_channels": str(cfg.in_channels),
            "input_hw": str(cfg.input_hw),
            "filters": ",".join(str(f) for f in cfg.filters),
            "classes": str(cfg.classes),
        },
    )
    rng = np.random.default_rng(init_seed)
    prev, cin, hw = "input", cfg.in_channels, cfg.input_hw
    for bi, f in enumerate(cfg.filters, start=1):
        if hw < 2:
            raise ShapeError(f"spatial extent {hw} too small to pool in block {bi}; input_hw {cfg.input_hw} supports at most {len(cfg.filters)} blocks")
        _add_conv(model, rng, f"block{bi}.conv", prev, cin, f, 3, 1, 1)
        model.add_layer(LayerSpec(f"block{bi}.relu", "activation", (f"block{bi}.conv",), {"fn": "relu"}))
        model.add_layer(LayerSpec(f"block{bi}.pool", "pool", (f"block{bi}.relu",), {"op": "max", "k": 2, "stride": 2, "padding": 0}))
        prev, cin, hw = f"block{bi}.pool", f, hw // 2
    _add_linear(model, rng, "fc", prev, cin * hw * hw, cfg.classes)
    model.default_tap = f"block{len(cfg.filters)}.relu"
    return model


def build_densenet121(config: DenseNetConfig | None = None, init_seed: int = 0) -> ModelGraph:
    """DenseNet-121: stem, four dense blocks joined by transitions, FC head.

    Each dense block stacks bottleneck pairs (bn -> relu -> conv1x1 at
    4x growth -> bn -> relu -> conv3x3 at growth); pair n consumes the
    channel concatenation of the block input and all earlier pair
    outputs, so block output channels are block_in + pairs * growth.
    Transitions halve channels (conv1x1) and spatial extent (avgpool2).
    """
    cfg = config or DenseNetConfig()
    if cfg.growth_rate < 1 or cfg.stem_channels < 1:
        raise ValueError("growth_rate and stem_channels must be >= 1")
    if cfg.classes < 2:
        raise ValueError(f"classes must be >= 2, got {cfg.classes}")
    if not cfg.block_sizes or any(s < 1 for s in cfg.block_sizes):
        raise ValueError(f"block_sizes must be positive, got {cfg.block_sizes}")
    if not 0.0 < cfg.compression <= 1.0:
        raise ValueError(f"compression must be in (0, 1], got {cfg.compression}")
    model = ModelGraph(
        "densenet121",
        (cfg.in_channels, cfg.input_hw, cfg.input_hw),
        {
            "arch": "densenet121",
            "in_channels": str(cfg.in_channels),
            "input_hw": str(cfg.input_hw),
            "growth_rate": str(cfg.growth_rate),
            "stem_channels": str(cfg.stem_channels),
            "block_sizes": ",".join(str(s) for s in cfg.block_sizes),
            "compression": str(cfg.compression),
            "classes": str(cfg.classes),
        },
    )
    rng = np.random.default_rng(init_seed)
    k = cfg.growth_rate

    _add_conv(model, rng, "stem.conv", "input", cfg.in_channels, cfg.stem_channels, 7, 2, 3)
    model.add_layer(LayerSpec("stem.pool", "pool", ("stem.conv",), {"op": "max", "k": 3, "stride": 2, "padding": 1}))

    prev, channels = "stem.pool", cfg.stem_channels
    for b, pairs in enumerate(cfg.block_sizes, start=1):
        feeds = [prev]
        for p in range(1, pairs + 1):
            base = f"block{b}.pair{p}"
            cin = channels + (p - 1) * k
            model.add_layer(LayerSpec(f"{base}.cat", "concat-group", tuple(feeds), {}))
            _add_bn(model, f"{base}.bn1", f"{base}.cat", cin)
            model.add_layer(LayerSpec(f"{base}.relu1", "activation", (f"{base}.bn1",), {"fn": "relu"}))
            _add_conv(model, rng, f"{base}.conv1", f"{base}.relu1", cin, 4 * k, 1, 1, 0)
            _add_bn(model, f"{base}.bn2", f"{base}.conv1", 4 * k)
            model.add_layer(LayerSpec(f"{base}.relu2", "activation", (f"{base}.bn2",), {"fn": "relu"}))
            _add_conv(model, rng, f"{base}.conv2", f"{base}.relu2", 4 * k, k, 3, 1, 1)
            feeds.append(f"{base}.conv2")
        model.add_layer(LayerSpec(f"block{b}.out", "concat-group", tuple(feeds), {}))
        channels += pairs * k
        prev = f"block{b}.out"
        if b < len(cfg.block_sizes):
            tname = f"trans{b}"
            _add_bn(model, f"{tname}.bn", prev, channels)
            model.add_layer(LayerSpec(f"{tname}.relu", "activation", (f"{tname}.bn",), {"fn": "relu"}))
            out_c = int(channels * cfg.compression)
            _add_conv(model, rng, f"{tname}.conv", f"{tname}.relu", channels, out_c, 1, 1, 0)
            model.add_layer(LayerSpec(f"{tname}.pool", "pool", (f"{tname}.conv",), {"op": "avg", "k": 2, "stride": 2, "padding": 0}))
            prev, channels = f"{tname}.pool", out_c

    _add_bn(model, "head.bn", prev, channels)
    model.add_layer(LayerSpec("head.relu", "activation", ("head.bn",), {"fn": "relu"}))
    model.add_layer(LayerSpec("head.gap", "global-pool", ("head.relu",), {}))
    _add_linear(model, rng, "fc", "head.gap", channels, cfg.classes)
    model.default_tap = f"block{len(cfg.block_sizes)}.out"
    return model


def count_layers(model: ModelGraph) -> int:
    """Weighted layers only: convolutions and fully connected layers."""
    return sum(1 for l in model.layers if l.kind in ("conv", "linear"))


# ---------------------------------------------------------------------------
# execution


def _execute(model: ModelGraph, input_node: ad.Node, mode: str) -> dict[str, ad.Node]:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    nodes: dict[str, ad.Node] = {"input": input_node}
    pnodes: dict[str, ad.Node] = {}

    def pnode(name: str) -> ad.Node:
        if name not in pnodes:
            pnodes[name] = ad.param_node(model.params[name])
        return pnodes[name]

    for spec in model.layers:
        ins = [nodes[s] for s in spec.inputs]
        a = spec.attrs
        if spec.kind == "conv":
            out = ad.conv2d(ins[0], pnode(f"{spec.name}.weight"), pnode(f"{spec.name}.bias"), int(a["stride"]), int(a["padding"]))
        elif spec.kind == "bn":
            rm = model.params[f"{spec.name}.running_mean"]
            rv = model.params[f"{spec.name}.running_var"]
            out, new_mean, new_var = ad.batchnorm2d(
                ins[0], pnode(f"{spec.name}.gamma"), pnode(f"{spec.name}.beta"), rm.value, rv.value, mode
            )
            if mode == "train":
                rm.value = new_mean
                rv.value = new_var
        elif spec.kind == "activation":
            out = ad.activation(str(a["fn"]), ins[0])
        elif spec.kind == "pool":
            if a["op"] == "max":
                out = ad.maxpool2d(ins[0], int(a["k"]), int(a["stride"]), int(a["padding"]))
            else:
                out = ad.avgpool2d(ins[0], int(a["k"]), int(a["stride"]))
        elif spec.kind == "global-pool":
            out = ad.global_avg_pool(ins[0])
        elif spec.kind == "linear":
            src = ins[0] if ins[0].value.ndim == 2 else ad.flatten(ins[0])
            out = ad.linear(src, pnode(f"{spec.name}.weight"), pnode(f"{spec.name}.bias"))
        elif spec.kind == "concat-group":
            out = ad.concat_channels(ins)
        else:
            raise ValueError(f"unknown layer kind {spec.kind!r} in layer {spec.name!r}")
        nodes[spec.name] = out
    return nodes


def _check_batch(model: ModelGraph, batch: Tensor) -> None:
    if not isinstance(batch, Tensor):
        raise TypeError("batch must be a Tensor")
    if batch.ndim != 4 or batch.shape[1:] != model.input_shape:
        raise ShapeError(f"expected batch shaped (N, {', '.join(map(str, model.input_shape))}), got {batch.shape}")


def forward_node(model: ModelGraph, batch: Tensor, mode: str = "eval") -> ad.Node:
    """Run the graph, returning the logits node (graph retained for backward)."""
    _check_batch(model, batch)
    nodes = _execute(model, ad.leaf(batch), mode)
    return nodes[model.layers[-1].name]


def forward(model: ModelGraph, batch: Tensor, mode: str = "eval") -> Tensor:
    """Logits for a batch: (N, classes). Eval mode mutates nothing."""
    return forward_node(model, batch, mode).value


class FeatureCapture:
    """A tapped activation plus the machinery to pull class gradients."""

    def __init__(self, tap_node: ad.Node, logits_node: ad.Node, layer: str):
        self._tap = tap_node
        self._logits = logits_node
        self.layer = layer
        self.activation = tap_node.value
        self.logits = logits_node.value

    def class_gradient(self, target_class: int) -> Tensor:
        """d logit[target_class] / d tapped activation, for batch row 0."""
        classes = self.logits.shape[1]
        if not 0 <= target_class < classes:
            raise ValueError(f"target_class {target_class} out of range [0, {classes})")
        for node in ad._topo_order(self._logits):
            node.grad = None
        loss = ad.take(self._logits, (0, int(target_class)))
        ad.backward(loss, accumulate=False)
        if self._tap.grad is None:
            return Tensor.zeros(self.activation.shape, dtype=self.activation.dtype)
        return Tensor(self._tap.grad, dtype=self._tap.grad.dtype)


def feature_maps(model: ModelGraph, batch: Tensor, layer_name: str | None = None) -> FeatureCapture:
    """Eval-mode forward that keeps a named layer's output for inspection."""
    _check_batch(model, batch)
    name = layer_name or model.default_tap
    model.get_layer(name)  # raises UnknownLayerError with the valid names
    nodes = _execute(model, ad.leaf(batch), "eval")
    return FeatureCapture(nodes[name], nodes[model.layers[-1].name], name)
