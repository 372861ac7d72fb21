"""Minimal dense neural-network kernel with exact manual backprop.

Covers exactly the layer set the training protocol needs: chains of linear
layers with tanh or identity activation, a softmax cross-entropy head, and
plain SGD. Party networks end in tanh so every embedding coordinate lies in
[-1, 1]; the server network is linear and feeds the cross-entropy loss.

All tensors are row-major 2-D float64 numpy arrays (batch rows, feature
columns). Forward passes return a self-contained cache (inputs, activations,
and the exact layer objects used), so a later parameter update can never
corrupt a pending backward pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "Layer",
    "DenseNet",
    "GradSet",
    "ForwardCache",
    "ServerCache",
    "make_party_net",
    "make_server_net",
    "forward",
    "backward",
    "forward_party",
    "backward_party",
    "forward_server",
    "backward_server",
    "sgd_step",
    "save_checkpoint",
    "load_checkpoint",
]

_ACTIVATIONS = ("tanh", "identity")

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Layer:
    """One dense layer: output = activation(input @ weight + bias).

    weight has shape (in_dim, out_dim); bias has shape (out_dim,).
    """

    weight: np.ndarray
    bias: np.ndarray
    activation: str

    def __post_init__(self) -> None:
        if self.weight.ndim != 2:
            raise ValueError(f"weight must be 2-D, got shape {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[1],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match weight {self.weight.shape}"
            )
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}, got {self.activation!r}")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("layer parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


@dataclass
class DenseNet:
    """A chain of dense layers with matching inner dimensions."""

    layers: list[Layer]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValueError("a net needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(
                    f"layer dimensions do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim


@dataclass
class GradSet:
    """Per-layer parameter gradients, shape-congruent with the owning net."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must have one entry per layer")


@dataclass(frozen=True)
class ForwardCache:
    """Everything backward() needs, captured at forward time."""

    layers: tuple[Layer, ...]
    inputs: tuple[np.ndarray, ...]  # input to each layer
    outputs: tuple[np.ndarray, ...]  # activation output of each layer


@dataclass(frozen=True)
class ServerCache:
    """Forward cache of the server net plus its softmax output."""

    fwd: ForwardCache
    probs: np.ndarray
    labels: np.ndarray


def _init_layer(in_dim: int, out_dim: int, activation: str, rng: np.random.Generator) -> Layer:
    # Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    limit = 1.0 / np.sqrt(in_dim)
    weight = rng.uniform(-limit, limit, size=(in_dim, out_dim))
    bias = rng.uniform(-limit, limit, size=out_dim)
    return Layer(weight=weight, bias=bias, activation=activation)


def make_party_net(
    in_dim: int, hidden: Sequence[int], embed_dim: int, rng: np.random.Generator
) -> DenseNet:
    """Party embedding net: dense tanh layers ending in a tanh embedding layer.

    The final tanh guarantees every embedding coordinate lies in [-1, 1], which
    is exactly the input bound the quantization mechanism requires.
    """
    dims = [in_dim, *hidden, embed_dim]
    layers = [
        _init_layer(dims[i], dims[i + 1], "tanh", rng) for i in range(len(dims) - 1)
    ]
    return DenseNet(layers)


def make_server_net(embed_dim: int, classes: int, rng: np.random.Generator) -> DenseNet:
    """Server fusion net: a single linear layer producing class logits."""
    return DenseNet([_init_layer(embed_dim, classes, "identity", rng)])


def forward(net: DenseNet, x_batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run the net on a (batch, in_dim) array; returns output and backward cache."""
    x = np.asarray(x_batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(
            f"input shape {x.shape} does not match net input dim {net.input_dim}"
        )
    inputs = []
    outputs = []
    out = x
    for layer in net.layers:
        inputs.append(out)
        z = out @ layer.weight + layer.bias
        out = np.tanh(z) if layer.activation == "tanh" else z
        outputs.append(out)
    cache = ForwardCache(layers=tuple(net.layers), inputs=tuple(inputs), outputs=tuple(outputs))
    return out, cache


def backward(cache: ForwardCache, grad_out: np.ndarray) -> tuple[GradSet, np.ndarray]:
    """Exact chain rule through a cached forward pass.

    grad_out is the loss gradient with respect to the net output. Returns the
    parameter gradients and the loss gradient with respect to the net input.
    """
    grad = np.asarray(grad_out, dtype=np.float64)
    if grad.shape != cache.outputs[-1].shape:
        raise ValueError(
            f"grad_out shape {grad.shape} does not match output {cache.outputs[-1].shape}"
        )
    weight_grads: list[np.ndarray] = [None] * len(cache.layers)  # type: ignore[list-item]
    bias_grads: list[np.ndarray] = [None] * len(cache.layers)  # type: ignore[list-item]
    for i in range(len(cache.layers) - 1, -1, -1):
        layer = cache.layers[i]
        if layer.activation == "tanh":
            grad = grad * (1.0 - cache.outputs[i] ** 2)
        weight_grads[i] = cache.inputs[i].T @ grad
        bias_grads[i] = grad.sum(axis=0)
        grad = grad @ layer.weight.T
    return GradSet(weights=weight_grads, biases=bias_grads), grad


def forward_party(net: DenseNet, x_batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Embed a feature batch; outputs lie in [-1, 1] because the net ends in tanh."""
    if net.layers[-1].activation != "tanh":
        raise ValueError("party nets must end in a tanh layer to bound embeddings")
    return forward(net, x_batch)


def backward_party(cache: ForwardCache, grad_embed: np.ndarray) -> GradSet:
    """Party parameter gradients given the loss gradient on its embedding rows.

    The aggregated embedding estimate receives each party's embedding through
    an identity map, so the incoming gradient rows apply to the party's own
    output unchanged.
    """
    grads, _ = backward(cache, grad_embed)
    return grads


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    # Log-domain form: finite for any finite logits, where exponentiating
    # first would underflow small class probabilities to exactly zero.
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward_server(
    net: DenseNet, h_sum: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray, ServerCache]:
    """Mean softmax cross-entropy of the fusion net on an embedding-sum batch."""
    h = np.asarray(h_sum, dtype=np.float64)
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != h.shape[0]:
        raise ValueError(f"labels shape {y.shape} does not match batch {h.shape[0]}")
    logits, fwd = forward(net, h)
    classes = logits.shape[1]
    if y.size and (y.min() < 0 or y.max() >= classes):
        raise ValueError(f"labels must lie in [0, {classes}), got range [{y.min()}, {y.max()}]")
    log_probs = _log_softmax(logits)
    loss = float(-log_probs[np.arange(len(y)), y].mean())
    probs = np.exp(log_probs)
    return loss, probs, ServerCache(fwd=fwd, probs=probs, labels=y)


def backward_server(cache: ServerCache, labels: np.ndarray) -> tuple[GradSet, np.ndarray]:
    """Exact gradients of the batch loss w.r.t. server parameters and input sum."""
    y = np.asarray(labels)
    if y.shape != cache.labels.shape or not np.array_equal(y, cache.labels):
        raise ValueError("labels do not match the ones used in forward_server")
    batch = cache.probs.shape[0]
    dlogits = cache.probs.copy()
    dlogits[np.arange(batch), y] -= 1.0
    dlogits /= batch
    return backward(cache.fwd, dlogits)


def sgd_step(net: DenseNet, grads: GradSet, eta: float) -> DenseNet:
    """In-place SGD update: every parameter decremented by eta times its gradient.

    Builds fresh parameter arrays rather than mutating, so caches captured
    before the step keep referring to the pre-step parameters.
    """
    if len(grads.weights) != len(net.layers):
        raise ValueError(
            f"gradient has {len(grads.weights)} layers, net has {len(net.layers)}"
        )
    updated = []
    for layer, dw, db in zip(net.layers, grads.weights, grads.biases):
        if dw.shape != layer.weight.shape or db.shape != layer.bias.shape:
            raise ValueError(
                f"gradient shapes {dw.shape}/{db.shape} do not match layer "
                f"{layer.weight.shape}/{layer.bias.shape}"
            )
        updated.append(
            Layer(
                weight=layer.weight - eta * dw,
                bias=layer.bias - eta * db,
                activation=layer.activation,
            )
        )
    net.layers = updated
    return net


def save_checkpoint(path: str, nets: dict[str, DenseNet]) -> None:
    """Round-trippable dump of named nets: one .npz with a JSON manifest.

    The manifest records the format version and, per net, each layer's
    activation; parameter arrays are stored under "<name>/<layer>/weight|bias".
    """
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "nets": {
            name: [layer.activation for layer in net.layers] for name, net in nets.items()
        },
    }
    arrays: dict[str, np.ndarray] = {}
    for name, net in nets.items():
        for i, layer in enumerate(net.layers):
            arrays[f"{name}/{i}/weight"] = layer.weight
            arrays[f"{name}/{i}/bias"] = layer.bias
    np.savez(path, __manifest__=np.frombuffer(json.dumps(manifest).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path: str) -> dict[str, DenseNet]:
    """Load nets saved by save_checkpoint."""
    with np.load(path) as blob:
        manifest = json.loads(bytes(blob["__manifest__"]).decode())
        if manifest.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(
                f"unsupported checkpoint version {manifest.get('format_version')!r}"
            )
        nets = {}
        for name, activations in manifest["nets"].items():
            layers = [
                Layer(
                    weight=blob[f"{name}/{i}/weight"],
                    bias=blob[f"{name}/{i}/bias"],
                    activation=act,
                )
                for i, act in enumerate(activations)
            ]
            nets[name] = DenseNet(layers)
    return nets
