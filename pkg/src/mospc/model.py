"""Trainable quality scorers and the late-fusion layer.

A :class:`Predictor` is a tanh MLP split into a feature *extractor* (whose
output is the embedding used for mixing), an *encoder*, and a linear scalar
*head*. Forward passes accept a single feature vector or an ``(B, D)`` batch;
backward passes are exact and hand-derived.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from mospc._io import read_json, write_json

FORMAT_VERSION = 1


@dataclass
class Dense:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class _LayerStack:
    extractor: list[Dense]
    encoder: list[Dense]
    head: Dense

    def layers(self) -> list[Dense]:
        return [*self.extractor, *self.encoder, self.head]

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list ``[W0, b0, W1, b1, ...]`` in forward order."""
        out = []
        for layer in self.layers():
            out += [layer.weight, layer.bias]
        return out

    def copy(self):
        return copy.deepcopy(self)


@dataclass
class Predictor(_LayerStack):
    def __post_init__(self):
        layers = self.layers()
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer shapes do not chain: {a.weight.shape} -> {b.weight.shape}")
        for layer in layers:
            if layer.bias.shape != (layer.out_dim,):
                raise ValueError(f"bias shape {layer.bias.shape} does not match weight {layer.weight.shape}")
        if self.head.out_dim != 1:
            raise ValueError("head must map to a single score")

    @property
    def input_dim(self) -> int:
        return self.layers()[0].in_dim

    @property
    def embedding_dim(self) -> int:
        return self.extractor[-1].out_dim if self.extractor else self.input_dim

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.parameters())


@dataclass
class Gradients(_LayerStack):
    """Parameter gradients, shape-congruent with the owning :class:`Predictor`."""

    @classmethod
    def zeros_like(cls, p: Predictor) -> "Gradients":
        z = lambda layer: Dense(np.zeros_like(layer.weight), np.zeros_like(layer.bias))
        return cls([z(l) for l in p.extractor], [z(l) for l in p.encoder], z(p.head))

    def __iadd__(self, other: "Gradients"):
        for a, b in zip(self.parameters(), other.parameters()):
            a += b
        return self


@dataclass
class ForwardCache:
    """Activations from a forward pass.

    ``start`` is the index (into ``Predictor.layers()``) of the first layer
    that was applied; ``inputs[k]`` is the input to layer ``start + k`` and
    ``outputs[k]`` its post-activation output.
    """

    start: int
    inputs: list[np.ndarray] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)
    single: bool = False


@dataclass(frozen=True)
class ModelConfig:
    """Hidden widths; the default is 16 -> 32 | 32 -> 32 -> 16 | 16 -> 1."""

    extractor_sizes: tuple[int, ...] = (32,)
    encoder_sizes: tuple[int, ...] = (32, 16)

    def __post_init__(self):
        object.__setattr__(self, "extractor_sizes", tuple(int(v) for v in self.extractor_sizes))
        object.__setattr__(self, "encoder_sizes", tuple(int(v) for v in self.encoder_sizes))
        if any(v < 1 for v in self.extractor_sizes + self.encoder_sizes):
            raise ValueError("layer widths must be positive")


def init_predictor(
    input_dim: int,
    extractor_sizes: Sequence[int] = (32,),
    encoder_sizes: Sequence[int] = (32, 16),
    seed=0,
) -> Predictor:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation of weights and biases."""
    rng = np.random.default_rng(seed)

    def dense(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        return Dense(w, b)

    dims = [input_dim, *extractor_sizes, *encoder_sizes]
    layers = [dense(a, b) for a, b in zip(dims, dims[1:])]
    n_ext = len(extractor_sizes)
    return Predictor(layers[:n_ext], layers[n_ext:], dense(dims[-1], 1))


def _as_batch(x, dim: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"{what} dimension mismatch: expected {dim}, got shape {np.shape(x)}")
    return x, single


def _run(layers: Sequence[Dense], h: np.ndarray, cache: ForwardCache | None, linear_last: bool):
    last = len(layers) - 1
    for k, layer in enumerate(layers):
        z = h @ layer.weight.T + layer.bias
        out = z if (linear_last and k == last) else np.tanh(z)
        if cache is not None:
            cache.inputs.append(h)
            cache.outputs.append(out)
        h = out
    return h


def extractor_forward(p: Predictor, x) -> np.ndarray:
    xb, single = _as_batch(x, p.input_dim, "input")
    e = _run(p.extractor, xb, None, linear_last=False)
    return e[0] if single else e


def encoder_forward_from_embedding(p: Predictor, e):
    """Score an embedding with the encoder and head. Returns ``(score, cache)``."""
    eb, single = _as_batch(e, p.embedding_dim, "embedding")
    cache = ForwardCache(start=len(p.extractor), single=single)
    h = _run(p.encoder, eb, cache, linear_last=False)
    m = _run([p.head], h, cache, linear_last=True)[:, 0]
    return (float(m[0]) if single else m), cache


def predictor_forward(p: Predictor, x):
    """Score features. Returns ``(score, cache)``; score is a float for 1-D input."""
    xb, single = _as_batch(x, p.input_dim, "input")
    cache = ForwardCache(start=0, single=single)
    h = _run(p.extractor, xb, cache, linear_last=False)
    h = _run(p.encoder, h, cache, linear_last=False)
    m = _run([p.head], h, cache, linear_last=True)[:, 0]
    return (float(m[0]) if single else m), cache


def predict(p: Predictor, x) -> np.ndarray:
    return predictor_forward(p, x)[0]


def predictor_backward(p: Predictor, cache: ForwardCache, upstream) -> Gradients:
    """Gradients of ``sum_b upstream[b] * m[b]`` w.r.t. every parameter.

    Layers not covered by ``cache`` (the extractor, after an embedding-level
    forward) get zero gradients.
    """
    grads = Gradients.zeros_like(p)
    layers = p.layers()
    glayers = grads.layers()
    n = cache.inputs[0].shape[0]
    up = np.broadcast_to(np.asarray(upstream, dtype=np.float64), (n,))
    delta = up[:, None]  # dL/dz at the head
    head_idx = len(layers) - 1
    for k in range(len(cache.inputs) - 1, -1, -1):
        idx = cache.start + k
        if idx != head_idx:
            a = cache.outputs[k]
            delta = delta * (1.0 - a * a)
        h = cache.inputs[k]
        glayers[idx].weight[...] = delta.T @ h
        glayers[idx].bias[...] = delta.sum(axis=0)
        if k > 0:
            delta = delta @ layers[idx].weight
    return grads


@dataclass
class FusionModel:
    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        self.bias = float(self.bias)

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def averaging(cls, k: int) -> "FusionModel":
        return cls(np.full(k, 1.0 / k), 0.0)


def fusion_forward(f: FusionModel, scores):
    s = np.asarray(scores, dtype=np.float64)
    if s.shape[-1] != f.k:
        raise ValueError(f"expected {f.k} predictor scores, got {s.shape[-1]}")
    m = s @ f.weights + f.bias
    return float(m) if s.ndim == 1 else m


def ensemble_scores(predictors: Sequence[Predictor], x) -> np.ndarray:
    """(N, K) matrix of individual predictor scores."""
    return np.stack([np.atleast_1d(predict(p, x)) for p in predictors], axis=-1)


def ensemble_predict(f: FusionModel, predictors: Sequence[Predictor], x):
    """Inference path: every predictor scores ``x``, the fusion layer combines them."""
    s = ensemble_scores(predictors, x)
    m = fusion_forward(f, s)
    return m[0] if np.ndim(x) == 1 else m


# -- checkpoints -------------------------------------------------------------


def _layer_to_dict(layer: Dense) -> dict:
    return {
        "shape": list(layer.weight.shape),
        "weight": layer.weight.reshape(-1).tolist(),
        "bias": layer.bias.tolist(),
    }


def _layer_from_dict(d: dict) -> Dense:
    out_dim, in_dim = d["shape"]
    w = np.array(d["weight"], dtype=np.float64)
    b = np.array(d["bias"], dtype=np.float64)
    if w.size != out_dim * in_dim or b.size != out_dim:
        raise ValueError(f"checkpoint layer sizes do not match shape {d['shape']}")
    return Dense(w.reshape(out_dim, in_dim), b)


def _check_header(d: dict, kind: str, path) -> None:
    if d.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format_version {d.get('format_version')!r}")
    if d.get("kind") != kind:
        raise ValueError(f"{path}: expected a {kind} checkpoint, found {d.get('kind')!r}")


def predictor_to_dict(p: Predictor) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "predictor",
        "extractor": [_layer_to_dict(l) for l in p.extractor],
        "encoder": [_layer_to_dict(l) for l in p.encoder],
        "head": _layer_to_dict(p.head),
    }


def save_predictor(p: Predictor, path) -> None:
    write_json(path, predictor_to_dict(p))


def load_predictor(path) -> Predictor:
    d = read_json(path)
    _check_header(d, "predictor", path)
    return Predictor(
        [_layer_from_dict(l) for l in d["extractor"]],
        [_layer_from_dict(l) for l in d["encoder"]],
        _layer_from_dict(d["head"]),
    )


def save_fusion(f: FusionModel, path, predictors: Sequence[str] = ()) -> None:
    """``predictors`` records the checkpoint paths (relative to ``path``) the layer was fit on."""
    write_json(
        path,
        {
            "format_version": FORMAT_VERSION,
            "kind": "fusion",
            "weights": f.weights.tolist(),
            "bias": f.bias,
            "predictors": list(predictors),
        },
    )


def load_fusion(path) -> tuple[FusionModel, list[Path]]:
    d = read_json(path)
    _check_header(d, "fusion", path)
    base = Path(path).parent
    return FusionModel(np.array(d["weights"], dtype=np.float64), d["bias"]), [base / p for p in d["predictors"]]
