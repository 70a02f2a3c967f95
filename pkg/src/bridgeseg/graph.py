"""Static computation graph with build-time shape checking and reverse-mode AD.

A ModelGraph is built once: every ``add_*`` call validates the new node's
shapes against its inputs before any arithmetic ever runs, so a
misconfigured architecture fails at construction, not mid-training.
Shapes are stored batch-free as (C, H, W); the batch dimension is bound at
forward time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .activations import (elu_backward, elu_forward, relu_backward,
                          relu_forward, saturation_stats, sigmoid_backward,
                          sigmoid_forward)
from .errors import ConfigError, DataError, GraphUsageError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


@dataclass
class Param:
    """A learnable tensor with its gradient buffer and initializer record."""

    name: str
    data: np.ndarray
    grad: np.ndarray | None = None
    init: str = ""

    @property
    def size(self) -> int:
        return self.data.size


@dataclass
class GraphNode:
    name: str
    op: str
    inputs: list[str]
    out_shape: tuple[int, int, int]
    params: dict[str, str] = field(default_factory=dict)
    attrs: dict = field(default_factory=dict)


class ModelGraph:
    """Directed acyclic graph of typed layer operations.

    One training step owns a graph exclusively: forward stores the caches
    that backward consumes. Repeated backward calls without an intervening
    forward are deterministic because parameter gradients are overwritten,
    never accumulated across calls.
    """

    def __init__(self, dtype=np.float32, seed: int = 0, meta: dict | None = None):
        self.dtype = np.dtype(dtype)
        self.nodes: dict[str, GraphNode] = {}
        self.order: list[str] = []
        self.params: dict[str, Param] = {}
        self.state: dict[str, np.ndarray] = {}
        self.meta: dict = meta if meta is not None else {}
        self.input_name: str | None = None
        self.output_name: str | None = None
        self._rng = np.random.default_rng(seed)
        self._acts: dict[str, np.ndarray] | None = None
        self._caches: dict[str, object] = {}
        self._last_saturation: dict[int, float] = {}

    # ---------------------------------------------------------------- build

    def _register(self, node: GraphNode) -> str:
        if node.name in self.nodes:
            raise ConfigError(f"duplicate node name {node.name!r}")
        for src in node.inputs:
            if src not in self.nodes:
                raise ConfigError(f"node {node.name!r} references unknown input {src!r}")
        self.nodes[node.name] = node
        self.order.append(node.name)
        return node.name

    def shape_of(self, name: str) -> tuple[int, int, int]:
        return self.nodes[name].out_shape

    def _new_param(self, name: str, shape, init: str) -> str:
        if name in self.params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        if init == "zeros":
            data = np.zeros(shape, dtype=self.dtype)
        elif init == "ones":
            data = np.ones(shape, dtype=self.dtype)
        elif init.startswith("gaussian"):
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
            std = float(np.sqrt(2.0 / fan_in))
            data = (self._rng.standard_normal(shape) * std).astype(self.dtype)
            init = f"gaussian(std={std:.6g})"
        else:
            raise ConfigError(f"unknown initializer {init!r}")
        self.params[name] = Param(name=name, data=data, init=init)
        return name

    def add_input(self, name: str, channels: int, height: int, width: int, **attrs) -> str:
        if self.input_name is not None:
            raise ConfigError("graph already has an input node")
        self.input_name = name
        return self._register(GraphNode(name, "input", [], (channels, height, width), attrs=attrs))

    def add_conv(self, name: str, src: str, out_channels: int, kernel: int,
                 stride: int = 1, padding: int = 0, bias: bool = True, **attrs) -> str:
        c, h, w = self.shape_of(src)
        out_h = ops.conv_output_size(h, kernel, stride, padding)
        out_w = ops.conv_output_size(w, kernel, stride, padding)
        params = {"w": self._new_param(f"{name}.w", (out_channels, c, kernel, kernel), "gaussian")}
        if bias:
            params["b"] = self._new_param(f"{name}.b", (out_channels,), "zeros")
        node = GraphNode(name, "conv", [src], (out_channels, out_h, out_w), params,
                         {"stride": stride, "padding": padding, **attrs})
        return self._register(node)

    def add_batch_norm(self, name: str, src: str, **attrs) -> str:
        c, h, w = self.shape_of(src)
        params = {
            "gamma": self._new_param(f"{name}.gamma", (c,), "ones"),
            "beta": self._new_param(f"{name}.beta", (c,), "zeros"),
        }
        self.state[f"{name}.running_mean"] = np.zeros(c, dtype=self.dtype)
        self.state[f"{name}.running_var"] = np.ones(c, dtype=self.dtype)
        node = GraphNode(name, "bn", [src], (c, h, w), params,
                         {"eps": BN_EPS, "momentum": BN_MOMENTUM, **attrs})
        return self._register(node)

    def add_activation(self, name: str, src: str, kind: str, alpha: float = 1.0, **attrs) -> str:
        if kind not in ("relu", "elu"):
            raise ConfigError(f"unknown activation kind {kind!r}")
        shape = self.shape_of(src)
        return self._register(GraphNode(name, "act", [src], shape, {},
                                        {"kind": kind, "alpha": alpha, **attrs}))

    def add_sigmoid(self, name: str, src: str, **attrs) -> str:
        return self._register(GraphNode(name, "sigmoid", [src], self.shape_of(src), {}, attrs))

    def add_max_pool(self, name: str, src: str, **attrs) -> str:
        c, h, w = self.shape_of(src)
        if h % 2 or w % 2:
            raise ConfigError(f"max_pool2 node {name!r} needs even spatial dims, got {h}x{w}")
        return self._register(GraphNode(name, "pool", [src], (c, h // 2, w // 2), {}, attrs))

    def add_up_conv(self, name: str, src: str, **attrs) -> str:
        c, h, w = self.shape_of(src)
        if c % 2:
            raise ConfigError(f"up_conv2 node {name!r} needs an even channel count, got {c}")
        params = {
            "w": self._new_param(f"{name}.w", (c // 2, c, 2, 2), "gaussian"),
            "b": self._new_param(f"{name}.b", (c // 2,), "zeros"),
        }
        return self._register(GraphNode(name, "upconv", [src], (c // 2, 2 * h, 2 * w), params, attrs))

    def add_concat(self, name: str, a: str, b: str, **attrs) -> str:
        ca, ha, wa = self.shape_of(a)
        cb, hb, wb = self.shape_of(b)
        if (ha, wa) != (hb, wb):
            raise ConfigError(
                f"concat node {name!r} spatial mismatch: {a}={ha}x{wa} vs {b}={hb}x{wb}")
        return self._register(GraphNode(name, "concat", [a, b], (ca + cb, ha, wa), {}, attrs))

    def add_add(self, name: str, a: str, b: str, **attrs) -> str:
        sa, sb = self.shape_of(a), self.shape_of(b)
        if sa != sb:
            raise ConfigError(f"add node {name!r} shape mismatch: {a}={sa} vs {b}={sb}")
        return self._register(GraphNode(name, "add", [a, b], sa, {}, attrs))

    def set_output(self, name: str) -> None:
        if name not in self.nodes:
            raise ConfigError(f"unknown output node {name!r}")
        self.output_name = name

    # ------------------------------------------------------------- validate

    def validate(self) -> None:
        """Audit the whole graph: topology order and per-node shape rules."""
        seen: set[str] = set()
        for name in self.order:
            node = self.nodes[name]
            for src in node.inputs:
                if src not in seen:
                    raise ConfigError(f"node {name!r} used before its input {src!r}")
            expected = self._infer_shape(node)
            if expected != node.out_shape:
                raise ConfigError(
                    f"node {name!r} declared shape {node.out_shape} but rule gives {expected}")
            seen.add(name)
        if self.output_name is None:
            raise ConfigError("graph has no output node")

    def _infer_shape(self, node: GraphNode) -> tuple[int, int, int]:
        shapes = [self.nodes[s].out_shape for s in node.inputs]
        if node.op == "input":
            return node.out_shape
        if node.op == "conv":
            c, h, w = shapes[0]
            w_shape = self.params[node.params["w"]].data.shape
            if w_shape[1] != c:
                raise ConfigError(f"conv {node.name!r} kernel expects {w_shape[1]} channels, input has {c}")
            k, s, p = w_shape[2], node.attrs["stride"], node.attrs["padding"]
            return (w_shape[0], ops.conv_output_size(h, k, s, p), ops.conv_output_size(w, k, s, p))
        if node.op in ("bn", "act", "sigmoid"):
            return shapes[0]
        if node.op == "pool":
            c, h, w = shapes[0]
            return (c, h // 2, w // 2)
        if node.op == "upconv":
            c, h, w = shapes[0]
            return (c // 2, 2 * h, 2 * w)
        if node.op == "concat":
            (ca, h, w), (cb, _, _) = shapes
            return (ca + cb, h, w)
        if node.op == "add":
            return shapes[0]
        raise ConfigError(f"unknown op {node.op!r}")

    # -------------------------------------------------------------- execute

    def forward(self, x, training: bool = False,
                collect_saturation: bool = False) -> np.ndarray:
        """Run the graph on a batch; returns the output node's activation."""
        if self.input_name is None or self.output_name is None:
            raise GraphUsageError("graph is missing input or output")
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 4:
            raise DataError(f"input batch must be rank 4 (N,C,H,W), got shape {x.shape}")
        expected = self.nodes[self.input_name].out_shape
        if tuple(x.shape[1:]) != expected:
            raise DataError(
                f"input shape {tuple(x.shape[1:])} does not match expected "
                f"(C,H,W)={expected}")

        acts: dict[str, np.ndarray] = {}
        caches: dict[str, object] = {}
        sat_hits: dict[int, list[tuple[float, int]]] = {}
        for name in self.order:
            node = self.nodes[name]
            if node.op == "input":
                acts[name] = x
                continue
            src = acts[node.inputs[0]]
            if node.op == "conv":
                w = self.params[node.params["w"]].data
                b = self.params[node.params["b"]].data if "b" in node.params else None
                acts[name], caches[name] = ops.conv2d_forward(
                    src, w, b, node.attrs["stride"], node.attrs["padding"])
            elif node.op == "bn":
                gamma = self.params[node.params["gamma"]].data
                beta = self.params[node.params["beta"]].data
                acts[name], caches[name] = ops.batch_norm_forward(
                    src, gamma, beta, node.attrs["eps"], training,
                    self.state[f"{name}.running_mean"], self.state[f"{name}.running_var"],
                    node.attrs["momentum"])
            elif node.op == "act":
                if collect_saturation and "cluster" in node.attrs:
                    frac = saturation_stats(src)
                    sat_hits.setdefault(node.attrs["cluster"], []).append((frac, src.size))
                if node.attrs["kind"] == "relu":
                    acts[name], caches[name] = relu_forward(src)
                else:
                    acts[name], caches[name] = elu_forward(src, node.attrs["alpha"])
            elif node.op == "sigmoid":
                acts[name], caches[name] = sigmoid_forward(src)
            elif node.op == "pool":
                acts[name], caches[name] = ops.max_pool2_forward(src)
            elif node.op == "upconv":
                w = self.params[node.params["w"]].data
                b = self.params[node.params["b"]].data
                acts[name], caches[name] = ops.up_conv2_forward(src, w, b)
            elif node.op == "concat":
                acts[name], caches[name] = ops.concat_channels_forward(
                    src, acts[node.inputs[1]])
            elif node.op == "add":
                acts[name], caches[name] = ops.add_forward(src, acts[node.inputs[1]])
            else:
                raise GraphUsageError(f"unknown op {node.op!r}")
        self._acts = acts
        self._caches = caches
        if collect_saturation:
            self._last_saturation = {
                cluster: sum(f * n for f, n in hits) / sum(n for _, n in hits)
                for cluster, hits in sat_hits.items()
            }
        return acts[self.output_name]

    @property
    def last_saturation(self) -> dict[int, float]:
        """Per-cluster saturation fractions from the last collecting forward."""
        return dict(self._last_saturation)

    def backward(self, grad_output: np.ndarray) -> dict[str, np.ndarray]:
        """Backpropagate from the output node; returns {param name: gradient}.

        Parameter gradients are freshly assigned on every call, so invoking
        backward twice without a new forward yields identical results.
        """
        if self._acts is None:
            raise GraphUsageError("backward called before forward")
        grad_output = np.asarray(grad_output, dtype=self.dtype)
        out_node = self.nodes[self.output_name]
        expected = (self._acts[self.output_name].shape)
        if grad_output.shape != expected:
            raise GraphUsageError(
                f"grad_output shape {grad_output.shape} != output shape {expected}")

        node_grads: dict[str, np.ndarray] = {self.output_name: grad_output}
        param_grads: dict[str, np.ndarray] = {}

        def send(dst: str, g: np.ndarray) -> None:
            if dst in node_grads:
                node_grads[dst] = node_grads[dst] + g
            else:
                node_grads[dst] = g

        for name in reversed(self.order):
            node = self.nodes[name]
            gy = node_grads.pop(name, None)
            if gy is None or node.op == "input":
                continue
            cache = self._caches.get(name)
            if node.op == "conv":
                gx, gw, gb = ops.conv2d_backward(cache, gy)
                param_grads[node.params["w"]] = gw
                if "b" in node.params:
                    param_grads[node.params["b"]] = gb
                send(node.inputs[0], gx)
            elif node.op == "bn":
                gx, ggamma, gbeta = ops.batch_norm_backward(cache, gy)
                param_grads[node.params["gamma"]] = ggamma
                param_grads[node.params["beta"]] = gbeta
                send(node.inputs[0], gx)
            elif node.op == "act":
                kind = node.attrs["kind"]
                gx = relu_backward(cache, gy) if kind == "relu" else elu_backward(cache, gy)
                send(node.inputs[0], gx)
            elif node.op == "sigmoid":
                send(node.inputs[0], sigmoid_backward(cache, gy))
            elif node.op == "pool":
                send(node.inputs[0], ops.max_pool2_backward(cache, gy))
            elif node.op == "upconv":
                gx, gw, gb = ops.up_conv2_backward(cache, gy)
                param_grads[node.params["w"]] = gw
                param_grads[node.params["b"]] = gb
                send(node.inputs[0], gx)
            elif node.op == "concat":
                ga, gb_ = ops.concat_channels_backward(cache, gy)
                send(node.inputs[0], ga)
                send(node.inputs[1], gb_)
            elif node.op == "add":
                ga, gb_ = ops.add_backward(cache, gy)
                send(node.inputs[0], ga)
                send(node.inputs[1], gb_)

        for pname, param in self.params.items():
            g = param_grads.get(pname)
            param.grad = g.astype(self.dtype, copy=False) if g is not None else np.zeros_like(param.data)
        return {p.name: p.grad for p in self.params.values()}

    # ------------------------------------------------------------- helpers

    def parameters(self) -> list[Param]:
        return list(self.params.values())

    def parameter_count(self, predicate=None) -> int:
        """Total scalar parameter count, optionally filtered by a node predicate."""
        if predicate is None:
            return sum(p.size for p in self.params.values())
        total = 0
        for node in self.nodes.values():
            if predicate(node):
                total += sum(self.params[p].size for p in node.params.values())
        return total

    def activation_nodes(self) -> list[GraphNode]:
        return [n for n in self.nodes.values() if n.op == "act"]

    def node_activation(self, name: str) -> np.ndarray:
        """Activation of an intermediate node from the last forward pass."""
        if self._acts is None:
            raise GraphUsageError("no forward pass has run")
        return self._acts[name]
