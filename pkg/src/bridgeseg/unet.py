"""Declarative builders for the single, stacked, and bridged U-nets.

Layout conventions baked into the builders:

* A "cluster" is two conv(3x3, same padding) -> batch norm -> activation
  blocks. Clusters are numbered per network: encoder top to bottom
  (1..depth), bottleneck (depth+1), decoder bottom to top
  (depth+2 .. 2*depth+1). The second network continues the numbering, so
  the default depth-4 dual net has clusters 1..18 and 36 numbered
  convolution layers (cluster k owns conv layers 2k-1 and 2k).
* Channel widths double per encoder level from ``base_channels`` and mirror
  back up the decoder; both networks use identical widths.
* The second network consumes the first network's pre-sigmoid logits
  concatenated with the original input image.
* Bridging fuses the first network's decoder cluster output into the
  second network's encoder stream at the same resolution. Concatenation
  joins the encoder cluster's input (widening its first convolution);
  addition requires equal channel counts and therefore joins the encoder
  cluster's output, leaving every convolution width unchanged. Skip
  features always tap the encoder cluster's own output, before any bridge
  fusion.
* Cross-network skip connections fuse the first network's encoder cluster
  output into the skip feature entering the second decoder's concatenation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .activations import ALL_ELU, ActivationScheme
from .errors import ConfigError, UnsupportedGraphError
from .graph import GraphNode, ModelGraph

BRIDGING_MODES = ("none", "add", "concat")
SKIP_MODES = ("none", "concat", "add")
BRIDGE_TAPS = ("cluster", "pre_cluster")


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 4
    base_channels: int = 32
    input_size: int = 256
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.input_size % (1 << self.depth):
            raise ConfigError(
                f"input_size {self.input_size} not divisible by 2^depth={1 << self.depth}")

    @property
    def clusters_per_net(self) -> int:
        return 2 * self.depth + 1


@dataclass(frozen=True)
class BridgeConfig:
    """Cross-network wiring: bridging (dotted edges) and skip fusion (red edges)."""

    bridging: str = "concat"
    skip: str = "add"
    scheme: ActivationScheme = ALL_ELU
    bridge_tap: str = "cluster"

    def __post_init__(self):
        if self.bridging not in BRIDGING_MODES:
            raise ConfigError(f"bridging must be one of {BRIDGING_MODES}, got {self.bridging!r}")
        if self.skip not in SKIP_MODES:
            raise ConfigError(f"skip must be one of {SKIP_MODES}, got {self.skip!r}")
        if self.bridge_tap not in BRIDGE_TAPS:
            raise ConfigError(f"bridge_tap must be one of {BRIDGE_TAPS}, got {self.bridge_tap!r}")


def _add_cluster(g: ModelGraph, src: str, out_c: int, cluster: int,
                 scheme: ActivationScheme, prefix: str, **tags) -> str:
    kind = scheme.kind_for(cluster)
    x = src
    for i in (1, 2):
        x = g.add_conv(f"{prefix}.conv{i}", x, out_c, kernel=3, stride=1, padding=1,
                       cluster=cluster, role="cluster_conv", **tags)
        x = g.add_batch_norm(f"{prefix}.bn{i}", x, cluster=cluster, **tags)
        x = g.add_activation(f"{prefix}.act{i}", x, kind, scheme.alpha,
                             cluster=cluster, **tags)
    return x


def _build_body(g: ModelGraph, input_node: str, cfg: UNetConfig,
                scheme: ActivationScheme, net: int, cluster_offset: int,
                bridge=None):
    """Add one encoder-decoder body; returns (logits, enc_outs, dec_outs, dec_ins).

    ``bridge`` (second network only) is a dict with keys 'mode',
    'dec_outs' (first net decoder outputs by level) and 'skip_mode' /
    'skip_feats' (first net encoder outputs by level).
    """
    d = cfg.depth
    base = cfg.base_channels
    p = f"n{net}"
    enc_outs: dict[int, str] = {}
    stream = input_node
    for level in range(1, d + 1):
        cluster = cluster_offset + level
        width = base * (1 << (level - 1))
        if bridge and bridge["mode"] == "concat":
            stream = g.add_concat(f"{p}.enc{level}.bridge", stream,
                                  bridge["dec_outs"][level],
                                  net=net, section="encoder", level=level, role="bridge_fuse")
        out = _add_cluster(g, stream, width, cluster, scheme, f"{p}.enc{level}",
                           net=net, section="encoder", level=level)
        enc_outs[level] = out
        if bridge and bridge["mode"] == "add":
            out = g.add_add(f"{p}.enc{level}.bridge", out, bridge["dec_outs"][level],
                            net=net, section="encoder", level=level, role="bridge_fuse")
        stream = g.add_max_pool(f"{p}.pool{level}", out, net=net, section="encoder", level=level)

    bottleneck_cluster = cluster_offset + d + 1
    stream = _add_cluster(g, stream, base * (1 << d), bottleneck_cluster, scheme,
                          f"{p}.bottleneck", net=net, section="bottleneck", level=d + 1)

    dec_outs: dict[int, str] = {}
    dec_ins: dict[int, str] = {}
    for level in range(d, 0, -1):
        cluster = cluster_offset + 2 * d + 2 - level
        width = base * (1 << (level - 1))
        up = g.add_up_conv(f"{p}.dec{level}.up", stream,
                           net=net, section="decoder", level=level, role="upconv")
        skip = enc_outs[level]
        if bridge and bridge["skip_mode"] == "concat":
            skip = g.add_concat(f"{p}.dec{level}.skip", bridge["skip_feats"][level], skip,
                                net=net, section="decoder", level=level, role="skip_fuse")
        elif bridge and bridge["skip_mode"] == "add":
            skip = g.add_add(f"{p}.dec{level}.skip", bridge["skip_feats"][level], skip,
                             net=net, section="decoder", level=level, role="skip_fuse")
        cat = g.add_concat(f"{p}.dec{level}.cat", up, skip,
                           net=net, section="decoder", level=level)
        dec_ins[level] = cat
        stream = _add_cluster(g, cat, width, cluster, scheme, f"{p}.dec{level}",
                              net=net, section="decoder", level=level)
        dec_outs[level] = stream

    logits = g.add_conv(f"{p}.head", stream, cfg.out_channels, kernel=1,
                        net=net, section="head", role="head")
    return logits, enc_outs, dec_outs, dec_ins


def build_unet(config: UNetConfig, scheme: ActivationScheme = ALL_ELU,
               seed: int = 0, dtype=np.float32) -> ModelGraph:
    """Single encoder-decoder segmentation net with a 1x1 conv + sigmoid head."""
    meta = {
        "arch": "unet",
        "depth": config.depth,
        "base_channels": config.base_channels,
        "input_size": config.input_size,
        "in_channels": config.in_channels,
        "relu_clusters": sorted(scheme.relu_clusters),
        "alpha": scheme.alpha,
    }
    g = ModelGraph(dtype=dtype, seed=seed, meta=meta)
    x = g.add_input("input", config.in_channels, config.input_size, config.input_size,
                    net=1, section="input")
    logits, _, _, _ = _build_body(g, x, config, scheme, net=1, cluster_offset=0)
    out = g.add_sigmoid("output", logits, net=1, section="head")
    g.set_output(out)
    g.validate()
    return g


def build_bridged(config: UNetConfig, bridge: BridgeConfig,
                  seed: int = 0, dtype=np.float32) -> ModelGraph:
    """Two stacked nets with optional bridging and cross-network skip fusion.

    ``bridging='none', skip='none'`` is the plain stacked configuration with
    zero cross-network fusion edges.
    """
    meta = {
        "arch": "bridged",
        "depth": config.depth,
        "base_channels": config.base_channels,
        "input_size": config.input_size,
        "in_channels": config.in_channels,
        "bridging": bridge.bridging,
        "skip": bridge.skip,
        "bridge_tap": bridge.bridge_tap,
        "relu_clusters": sorted(bridge.scheme.relu_clusters),
        "alpha": bridge.scheme.alpha,
    }
    g = ModelGraph(dtype=dtype, seed=seed, meta=meta)
    x = g.add_input("input", config.in_channels, config.input_size, config.input_size,
                    net=1, section="input")
    logits1, enc1, dec1, dec_ins1 = _build_body(g, x, config, bridge.scheme,
                                                net=1, cluster_offset=0)
    stack = g.add_concat("n2.stack", x, logits1, net=2, section="stack", role="stack")

    bridge_spec = None
    if bridge.bridging != "none" or bridge.skip != "none":
        taps = dec1 if bridge.bridge_tap == "cluster" else dec_ins1
        bridge_spec = {
            "mode": bridge.bridging,
            "dec_outs": taps,
            "skip_mode": bridge.skip,
            "skip_feats": enc1,
        }
    logits2, _, _, _ = _build_body(g, stack, config, bridge.scheme,
                                   net=2, cluster_offset=config.clusters_per_net,
                                   bridge=bridge_spec)
    out = g.add_sigmoid("output", logits2, net=2, section="head")
    g.set_output(out)
    g.validate()
    return g


# --------------------------------------------------------------- introspection

@dataclass
class ClusterMap:
    """Mapping between numbered convolution layers and their clusters."""

    total_clusters: int
    cluster_of_conv: dict[int, int] = field(default_factory=dict)
    convs_of_cluster: dict[int, tuple[int, ...]] = field(default_factory=dict)

    @property
    def conv_layer_count(self) -> int:
        return len(self.cluster_of_conv)


def conv_layer_sequence(graph: ModelGraph) -> list[GraphNode]:
    """All convolution-type nodes (cluster convs, up-convs, heads) in
    topological execution order."""
    return [graph.nodes[n] for n in graph.order if graph.nodes[n].op in ("conv", "upconv")]


def cluster_index_map(graph: ModelGraph) -> ClusterMap:
    """Recover the cluster numbering from a graph built by this module.

    Numbered convolution layers are the cluster convolutions only; up-convs
    and 1x1 heads are unnumbered. Raises UnsupportedGraphError for graphs
    lacking the builder's annotations.
    """
    cluster_convs = [n for n in conv_layer_sequence(graph)
                     if n.attrs.get("role") == "cluster_conv"]
    if not cluster_convs:
        raise UnsupportedGraphError("graph carries no cluster annotations")
    cmap = ClusterMap(total_clusters=0)
    per_cluster: dict[int, list[int]] = {}
    for idx, node in enumerate(cluster_convs, start=1):
        cluster = node.attrs.get("cluster")
        if cluster is None:
            raise UnsupportedGraphError(f"conv node {node.name!r} lacks a cluster tag")
        cmap.cluster_of_conv[idx] = cluster
        per_cluster.setdefault(cluster, []).append(idx)
    for cluster, convs in per_cluster.items():
        if len(convs) != 2:
            raise UnsupportedGraphError(
                f"cluster {cluster} owns {len(convs)} convs, expected exactly 2")
        cmap.convs_of_cluster[cluster] = tuple(convs)
    expected = set(range(1, len(per_cluster) + 1))
    if set(per_cluster) != expected:
        raise UnsupportedGraphError(f"cluster indices {sorted(per_cluster)} are not contiguous")
    cmap.total_clusters = len(per_cluster)
    return cmap


def conv_gap_between_clusters(graph: ModelGraph, cluster_a: int, cluster_b: int) -> int:
    """Count convolution layers strictly between two clusters in execution order.

    Counts cluster convolutions and 2x2 up-convolutions; 1x1 output heads are
    not convolution layers in this bookkeeping.
    """
    seq = [n for n in conv_layer_sequence(graph) if n.attrs.get("role") != "head"]
    idx_a = [i for i, n in enumerate(seq) if n.attrs.get("cluster") == cluster_a]
    idx_b = [i for i, n in enumerate(seq) if n.attrs.get("cluster") == cluster_b]
    if not idx_a or not idx_b:
        raise UnsupportedGraphError(f"clusters {cluster_a}/{cluster_b} not found in graph")
    return len(seq[max(idx_a) + 1:min(idx_b)])


def activation_assignment(graph: ModelGraph) -> dict[int, str]:
    """Per-cluster activation kind, validated to be uniform within a cluster."""
    kinds: dict[int, str] = {}
    for node in graph.activation_nodes():
        cluster = node.attrs.get("cluster")
        if cluster is None:
            continue
        kind = node.attrs["kind"]
        if kinds.setdefault(cluster, kind) != kind:
            raise UnsupportedGraphError(f"cluster {cluster} mixes activation kinds")
    return kinds


def cross_network_edges(graph: ModelGraph) -> list[tuple[str, str, str]]:
    """Edges fusing first-network features into the second network.

    Returns (source node, fusion node, kind) triples with kind 'bridge' or
    'skip'. The stacking edge feeding the second network's input is part of
    every two-net configuration and is not counted.
    """
    edges = []
    for node in graph.nodes.values():
        role = node.attrs.get("role")
        if role == "bridge_fuse":
            kind = "bridge"
        elif role == "skip_fuse":
            kind = "skip"
        else:
            continue
        for src in node.inputs:
            if graph.nodes[src].attrs.get("net") == 1:
                edges.append((src, node.name, kind))
    return edges


def encoder_first_conv_channels(graph: ModelGraph, net: int = 2) -> dict[int, int]:
    """Input channel count of the first convolution of each encoder-side
    cluster (encoder levels plus the bottleneck) of the given network."""
    result: dict[int, int] = {}
    for node in conv_layer_sequence(graph):
        if node.attrs.get("role") != "cluster_conv" or node.attrs.get("net") != net:
            continue
        if node.attrs.get("section") not in ("encoder", "bottleneck"):
            continue
        cluster = node.attrs["cluster"]
        if cluster not in result:
            w_shape = graph.params[node.params["w"]].data.shape
            result[cluster] = w_shape[1]
    return result


def section_parameter_count(graph: ModelGraph, net: int, section: str) -> int:
    return graph.parameter_count(
        lambda n: n.attrs.get("net") == net and n.attrs.get("section") == section)


# ------------------------------------------------------------- config format

MODEL_CONFIG_KEYS = ("arch", "depth", "base_channels", "input_size", "in_channels",
                     "bridging", "skip", "bridge_tap", "relu_clusters", "alpha",
                     "loss", "q")


def model_config_to_text(meta: dict) -> str:
    """Serialize an architecture description as 'key = value' lines."""
    lines = []
    for key in MODEL_CONFIG_KEYS:
        if key not in meta:
            continue
        value = meta[key]
        if key == "relu_clusters":
            value = ",".join(str(v) for v in value) if value else "none"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def model_config_from_text(text: str) -> dict:
    """Parse the plain-text architecture config format."""
    meta: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno} is not 'key = value': {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in ("depth", "base_channels", "input_size", "in_channels"):
            meta[key] = int(value)
        elif key in ("alpha", "q"):
            meta[key] = float(value)
        elif key == "relu_clusters":
            meta[key] = [] if value in ("none", "") else [int(v) for v in value.split(",")]
        else:
            meta[key] = value
    return meta


def build_from_meta(meta: dict, seed: int = 0, dtype=np.float32) -> ModelGraph:
    """Reconstruct a graph from an embedded architecture description."""
    config = UNetConfig(depth=meta["depth"], base_channels=meta["base_channels"],
                        input_size=meta["input_size"],
                        in_channels=meta.get("in_channels", 1))
    scheme = ActivationScheme(frozenset(meta.get("relu_clusters", [])),
                              alpha=meta.get("alpha", 1.0))
    arch = meta.get("arch", "bridged")
    if arch == "unet":
        return build_unet(config, scheme, seed=seed, dtype=dtype)
    if arch == "bridged":
        bridge = BridgeConfig(bridging=meta.get("bridging", "concat"),
                              skip=meta.get("skip", "add"), scheme=scheme,
                              bridge_tap=meta.get("bridge_tap", "cluster"))
        return build_bridged(config, bridge, seed=seed, dtype=dtype)
    raise ConfigError(f"unknown architecture {arch!r}")
