"""Declarative network assembly.

A network is an ordered list of layer specs plus an input shape, a class
count and a float precision. Configs can be written as line-oriented text::

    input 28 28 1
    classes 10
    precision 32
    layer rrl quarter4 independent 1 2   # mode policy [stride [padding]]
    layer conv 5 6 5                     # F C_out stride [padding]
    layer relu
    layer maxpool
    ...

A rotation layer sizes its windows from the convolution that follows it, and
that convolution must step exactly one tile at a time (stride == F, no
padding).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Union

import numpy as np

from . import nn
from .lbp import ChannelPolicy, LbpMode, check_mode
from .rrl import global_rrl, global_rrl_backward, rrl_backward, rrl_forward
from .tensor import WindowGrid, as_tensor, dtype_for


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Rrl:
    mode: LbpMode = LbpMode.QUARTER4
    policy: ChannelPolicy = ChannelPolicy.INDEPENDENT
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class Conv:
    size: int
    channels: int
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class Dense:
    units: int


@dataclass(frozen=True)
class MaxPool:
    pass


@dataclass(frozen=True)
class AvgPool:
    pass


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class GlobalRrl:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Softmax:
    pass


LayerSpec = Union[Rrl, Conv, Dense, MaxPool, AvgPool, Relu, GlobalRrl, Flatten, Softmax]


@dataclass(frozen=True)
class NetworkConfig:
    layers: tuple
    input_shape: tuple  # (H, W, C)
    classes: int
    precision: int = 32

    def with_precision(self, precision: int) -> "NetworkConfig":
        return replace(self, precision=precision)


# ---------------------------------------------------------------- text format

_SIMPLE = {
    "maxpool": MaxPool,
    "avgpool": AvgPool,
    "relu": Relu,
    "globalrrl": GlobalRrl,
    "flatten": Flatten,
    "softmax": Softmax,
}


def _ints(tokens, lineno, what):
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise ConfigError(f"line {lineno}: {what} expects integers, got {' '.join(tokens)!r}") from None


def _parse_layer(tokens: list[str], lineno: int) -> LayerSpec:
    kind, args = tokens[0].lower(), tokens[1:]
    if kind in _SIMPLE:
        if args:
            raise ConfigError(f"line {lineno}: layer {kind} takes no arguments")
        return _SIMPLE[kind]()
    if kind == "rrl":
        if not 2 <= len(args) <= 4:
            raise ConfigError(f"line {lineno}: usage 'layer rrl <ring8|quarter4> <independent|shared> [stride [padding]]'")
        try:
            mode, policy = LbpMode(args[0].lower()), ChannelPolicy(args[1].lower())
        except ValueError as e:
            raise ConfigError(f"line {lineno}: {e}") from None
        extra = _ints(args[2:], lineno, "rrl")
        return Rrl(mode, policy, *extra)
    if kind == "conv":
        if not 3 <= len(args) <= 4:
            raise ConfigError(f"line {lineno}: usage 'layer conv <F> <C_out> <stride> [padding]'")
        return Conv(*_ints(args, lineno, "conv"))
    if kind == "dense":
        if len(args) != 1:
            raise ConfigError(f"line {lineno}: usage 'layer dense <units>'")
        return Dense(*_ints(args, lineno, "dense"))
    raise ConfigError(f"line {lineno}: unknown layer type {kind!r}")


def parse_config(text: str) -> NetworkConfig:
    input_shape = classes = precision = None
    layers = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        tokens = raw.split("#", 1)[0].split()
        if not tokens:
            continue
        key, args = tokens[0].lower(), tokens[1:]
        if key == "input":
            if len(args) != 3:
                raise ConfigError(f"line {lineno}: usage 'input <h> <w> <c>'")
            input_shape = tuple(_ints(args, lineno, "input"))
        elif key == "classes":
            if len(args) != 1:
                raise ConfigError(f"line {lineno}: usage 'classes <k>'")
            (classes,) = _ints(args, lineno, "classes")
        elif key == "precision":
            if args not in (["32"], ["64"]):
                raise ConfigError(f"line {lineno}: precision must be 32 or 64")
            precision = int(args[0])
        elif key == "layer":
            if not args:
                raise ConfigError(f"line {lineno}: missing layer spec")
            layers.append(_parse_layer(args, lineno))
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    for name, value in (("input", input_shape), ("classes", classes), ("precision", precision)):
        if value is None:
            raise ConfigError(f"missing required key {name!r}")
    config = NetworkConfig(tuple(layers), input_shape, classes, precision)
    validate(config)
    return config


def format_layer(spec: LayerSpec) -> str:
    if isinstance(spec, Rrl):
        return f"rrl {spec.mode.value} {spec.policy.value} {spec.stride} {spec.padding}"
    if isinstance(spec, Conv):
        return f"conv {spec.size} {spec.channels} {spec.stride} {spec.padding}"
    if isinstance(spec, Dense):
        return f"dense {spec.units}"
    for name, cls in _SIMPLE.items():
        if isinstance(spec, cls):
            return name
    raise TypeError(f"not a layer spec: {spec!r}")


def format_config(config: NetworkConfig) -> str:
    h, w, c = config.input_shape
    lines = [f"input {h} {w} {c}", f"classes {config.classes}", f"precision {config.precision}"]
    lines += [f"layer {format_layer(s)}" for s in config.layers]
    return "\n".join(lines) + "\n"


def load_config(path) -> NetworkConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# ----------------------------------------------------------------- validation


def layer_shapes(config: NetworkConfig) -> list[tuple]:
    """Validate ``config`` and return the output shape of every layer.

    Spatial shapes are (H, W, C); flat shapes are (D,).
    """
    if len(config.input_shape) != 3 or min(config.input_shape) < 1:
        raise ConfigError(f"input shape must be three positive integers, got {config.input_shape}")
    if config.classes < 1:
        raise ConfigError("classes must be >= 1")
    dtype_for(config.precision)
    layers = list(config.layers)
    shape = tuple(config.input_shape)
    shapes = []
    seen_global = seen_flat = False

    for i, spec in enumerate(layers):
        where = f"layer {i} ({format_layer(spec)})"
        spatial = len(shape) == 3
        if isinstance(spec, (Rrl, Conv, MaxPool, AvgPool, GlobalRrl, Flatten)) and not spatial:
            raise ConfigError(f"{where}: needs a spatial input, got flat shape {shape}")
        try:
            if isinstance(spec, Rrl):
                nxt = layers[i + 1] if i + 1 < len(layers) else None
                if not isinstance(nxt, Conv):
                    raise ConfigError(f"{where}: a rotation layer must be followed by a conv")
                if nxt.stride != nxt.size or nxt.padding != 0:
                    raise ConfigError(f"{where}: the following conv must use stride {nxt.size} and no padding")
                check_mode(spec.mode, nxt.size)
                grid = WindowGrid(nxt.size, spec.stride, spec.padding)
                grid.check_quarter_symmetric(shape[0], shape[1])
                oh, ow = grid.out_shape(shape[0], shape[1])
                shape = (oh * nxt.size, ow * nxt.size, shape[2])
            elif isinstance(spec, Conv):
                if spec.channels < 1:
                    raise ConfigError(f"{where}: needs at least one output channel")
                oh, ow = WindowGrid(spec.size, spec.stride, spec.padding).out_shape(shape[0], shape[1])
                shape = (oh, ow, spec.channels)
            elif isinstance(spec, (MaxPool, AvgPool)):
                if shape[0] % 2 or shape[1] % 2:
                    raise ConfigError(f"{where}: 2x2 pooling needs even sizes, got {shape}")
                shape = (shape[0] // 2, shape[1] // 2, shape[2])
            elif isinstance(spec, GlobalRrl):
                if seen_global:
                    raise ConfigError(f"{where}: at most one global rotation layer")
                if seen_flat:
                    raise ConfigError(f"{where}: global rotation must come before flatten/dense")
                if shape[0] != shape[1]:
                    raise ConfigError(f"{where}: global rotation needs a square map, got {shape}")
                seen_global = True
            elif isinstance(spec, Flatten):
                seen_flat = True
                shape = (int(np.prod(shape)),)
            elif isinstance(spec, Dense):
                if spatial:
                    raise ConfigError(f"{where}: dense needs a flattened input")
                if spec.units < 1:
                    raise ConfigError(f"{where}: dense needs at least one unit")
                seen_flat = True
                shape = (spec.units,)
            elif isinstance(spec, Softmax):
                if i != len(layers) - 1:
                    raise ConfigError(f"{where}: softmax must be the last layer")
            elif not isinstance(spec, Relu):
                raise ConfigError(f"layer {i}: unknown spec {spec!r}")
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(f"{where}: {e}") from None
        shapes.append(shape)

    if shape != (config.classes,):
        raise ConfigError(f"network output shape {shape} does not match {config.classes} classes")
    return shapes


def validate(config: NetworkConfig) -> None:
    layer_shapes(config)


# -------------------------------------------------------------------- network


class Network:
    """A built network: parameters plus forward/backward over the layer list.

    forward(x) returns logits; softmax is applied only inside the loss.
    """

    def __init__(self, config: NetworkConfig, params: dict | None = None, seed: int = 0):
        self.shapes = layer_shapes(config)
        self.config = config
        self.dtype = dtype_for(config.precision)
        fresh = self._init_params(seed)
        if params is not None:
            missing = set(fresh) ^ set(params)
            if missing:
                raise ConfigError(f"parameter names do not match config: {sorted(missing)}")
            for name, value in params.items():
                if np.shape(value) != fresh[name].shape:
                    raise ConfigError(f"parameter {name} has shape {np.shape(value)}, expected {fresh[name].shape}")
            fresh = {k: np.asarray(params[k], dtype=self.dtype) for k in fresh}
        self.params = fresh
        self._cache = None
        self._logits = None

    def _init_params(self, seed: int) -> dict:
        rng = np.random.default_rng(seed)
        params = {}
        shape = self.config.input_shape
        for i, spec in enumerate(self.config.layers):
            if isinstance(spec, Conv):
                p = nn.init_conv(rng, spec.size, shape[2], spec.channels, dtype=self.dtype)
                params[f"{i}.kernels"], params[f"{i}.bias"] = p.kernels, p.bias
            elif isinstance(spec, Dense):
                p = nn.init_dense(rng, shape[0], spec.units, dtype=self.dtype)
                params[f"{i}.weights"], params[f"{i}.bias"] = p.weights, p.bias
            shape = self.shapes[i]
        return params

    @property
    def rotation_layer_count(self) -> int:
        return sum(isinstance(s, (Rrl, GlobalRrl)) for s in self.config.layers)

    def _conv(self, i):
        spec = self.config.layers[i]
        return nn.ConvParams(self.params[f"{i}.kernels"], self.params[f"{i}.bias"], spec.stride, spec.padding)

    def _dense(self, i):
        return nn.DenseParams(self.params[f"{i}.weights"], self.params[f"{i}.bias"])

    def _layer_forward(self, i, x):
        spec = self.config.layers[i]
        if isinstance(spec, Rrl):
            size = self.config.layers[i + 1].size
            return rrl_forward(x, WindowGrid(size, spec.stride, spec.padding), spec.mode, spec.policy)
        if isinstance(spec, Conv):
            return nn.conv_forward(x, self._conv(i)), None
        if isinstance(spec, Relu):
            return nn.relu_forward(x), None
        if isinstance(spec, MaxPool):
            return nn.maxpool2_forward(x), None
        if isinstance(spec, AvgPool):
            return nn.avgpool2_forward(x), None
        if isinstance(spec, GlobalRrl):
            return global_rrl(x)
        if isinstance(spec, Flatten):
            return x.reshape(x.shape[0], -1), None
        if isinstance(spec, Dense):
            return nn.dense_forward(x, self._dense(i)), None
        return x, None  # softmax: logits pass through

    def forward(self, x, keep: bool = False) -> np.ndarray:
        x = as_tensor(x).astype(self.dtype, copy=False)
        if x.shape[1:] != tuple(self.config.input_shape):
            raise ValueError(f"input shape {x.shape[1:]} != configured {self.config.input_shape}")
        cache = []
        for i in range(len(self.config.layers)):
            y, aux = self._layer_forward(i, x)
            if keep:
                cache.append((x, aux))
            x = y
        self._cache = cache if keep else None
        self._logits = x if keep else None
        return x

    __call__ = forward

    def activations(self, x) -> list[np.ndarray]:
        """Output of every layer, in order."""
        x = as_tensor(x).astype(self.dtype, copy=False)
        outs = []
        for i in range(len(self.config.layers)):
            x, _ = self._layer_forward(i, x)
            outs.append(x)
        return outs

    def features(self, x) -> np.ndarray:
        """Flattened input of the first dense layer (the pre-classifier features)."""
        x = as_tensor(x).astype(self.dtype, copy=False)
        for i, spec in enumerate(self.config.layers):
            if isinstance(spec, Dense):
                return x.reshape(x.shape[0], -1)
            x, _ = self._layer_forward(i, x)
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_logits) -> tuple[dict, np.ndarray]:
        """Backpropagate through the cached forward pass; returns (grads, grad_input)."""
        if self._cache is None:
            raise RuntimeError("backward needs a preceding forward(x, keep=True)")
        grads = {}
        g = np.asarray(grad_logits, dtype=self.dtype)
        for i in reversed(range(len(self.config.layers))):
            spec = self.config.layers[i]
            x, aux = self._cache[i]
            if isinstance(spec, Rrl):
                g = rrl_backward(g, aux)
            elif isinstance(spec, Conv):
                g, gp = nn.conv_backward(x, self._conv(i), g)
                grads[f"{i}.kernels"], grads[f"{i}.bias"] = gp.kernels, gp.bias
            elif isinstance(spec, Relu):
                g = nn.relu_backward(x, g)
            elif isinstance(spec, MaxPool):
                g = nn.maxpool2_backward(x, g)
            elif isinstance(spec, AvgPool):
                g = nn.avgpool2_backward(x, g)
            elif isinstance(spec, GlobalRrl):
                g = global_rrl_backward(g, aux)
            elif isinstance(spec, Flatten):
                g = g.reshape(x.shape)
            elif isinstance(spec, Dense):
                g, gp = nn.dense_backward(x, self._dense(i), g)
                grads[f"{i}.weights"], grads[f"{i}.bias"] = gp.weights, gp.bias
        return grads, g

    def loss_and_grads(self, x, labels):
        logits = self.forward(x, keep=True)
        loss, grad = nn.softmax_cross_entropy(logits, labels)
        grads, _ = self.backward(grad)
        return loss, grads

    def predict(self, x, batch: int = 256) -> np.ndarray:
        x = as_tensor(x)
        out = [self.forward(x[i : i + batch]).argmax(axis=1) for i in range(0, x.shape[0], batch)]
        return np.concatenate(out)


def build(config: NetworkConfig, params: dict | None = None, seed: int = 0) -> Network:
    return Network(config, params, seed)


def forward_full(net: Network, x) -> np.ndarray:
    return net.forward(x, keep=True)


def backward_full(net: Network, labels) -> dict:
    """Cross-entropy gradients of every parameter for the last `forward_full` call."""
    if net._logits is None:
        raise RuntimeError("backward_full needs a preceding forward_full")
    _, grad = nn.softmax_cross_entropy(net._logits, labels)
    grads, _ = net.backward(grad)
    return grads


# --------------------------------------------------------------------- presets

PRESETS = ("lenet5", "lenet5-rrl", "lenet5-rrl-noglobal")


def preset(
    name: str,
    input_shape=(28, 28, 1),
    classes: int = 10,
    precision: int = 32,
    mode: LbpMode = LbpMode.QUARTER4,
    policy: ChannelPolicy = ChannelPolicy.INDEPENDENT,
) -> NetworkConfig:
    """LeNet-5 with or without rotation layers.

    The rotation variant puts a window rotation layer in front of each conv
    and a global rotation after the last pooling stage. Padding on the first
    stage brings inputs smaller than 32 up to the classic 28 -> 14 -> 10 -> 5
    feature sizes.
    """
    h = input_shape[0]
    pad = max(0, (32 - h) // 2)
    head = (Flatten(), Dense(120), Relu(), Dense(84), Relu(), Dense(classes))
    if name == "lenet5":
        body = (Conv(5, 6, 1, pad), Relu(), MaxPool(), Conv(5, 16, 1), Relu(), MaxPool())
    elif name in ("lenet5-rrl", "lenet5-rrl-noglobal"):
        body = (
            Rrl(mode, policy, 1, pad), Conv(5, 6, 5), Relu(), MaxPool(),
            Rrl(mode, policy), Conv(5, 16, 5), Relu(), MaxPool(),
        )
        if name == "lenet5-rrl":
            body += (GlobalRrl(),)
    else:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    config = NetworkConfig(body + head, tuple(input_shape), classes, precision)
    validate(config)
    return config
