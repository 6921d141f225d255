"""Frozen decoder head: maps node embeddings to per-frame state predictions."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import EmbeddingSequence, VelocitySequence, as_tensor, read_tensor, write_tensor

ACTIVATIONS = ("RELU", "NONE")


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # [in, out]
    bias: np.ndarray  # [out]
    activation: str = "NONE"

    def __post_init__(self):
        object.__setattr__(self, "weight", as_tensor(self.weight, 2, "layer weight"))
        object.__setattr__(self, "bias", as_tensor(self.bias, 1, "layer bias"))
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.bias.shape[0] != self.weight.shape[1]:
            raise ValueError("bias width does not match layer output width")


@dataclass(frozen=True)
class FrozenDecoder:
    layers: tuple[Layer, ...]
    kind: str = "MLP"

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("decoder needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.weight.shape[1] != nxt.weight.shape[0]:
                raise ValueError("layer shapes do not chain")
        if self.kind not in ("LINEAR", "MLP"):
            raise ValueError(f"unknown decoder kind {self.kind!r}")
        if self.kind == "LINEAR" and (len(layers) != 1 or layers[0].activation != "NONE"):
            raise ValueError("LINEAR decoder must be a single affine layer")
        object.__setattr__(self, "layers", layers)

    @property
    def d_emb(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def d(self) -> int:
        return self.layers[-1].weight.shape[1]

    @classmethod
    def linear(cls, weight, bias) -> "FrozenDecoder":
        return cls((Layer(weight, bias, "NONE"),), kind="LINEAR")


def _apply(dec: FrozenDecoder, h: np.ndarray, keep: bool = False):
    acts = [h]
    for layer in dec.layers:
        h = h @ layer.weight + layer.bias
        if layer.activation == "RELU":
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts if keep else h


def decode_frame(dec: FrozenDecoder, emb) -> np.ndarray:
    """Apply the layer chain to each node embedding of one frame."""
    emb = np.asarray(emb, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[1] != dec.d_emb:
        raise ValueError(f"expected [N, {dec.d_emb}] embeddings, got {emb.shape}")
    return _apply(dec, emb)


def decode_array(dec: FrozenDecoder, embs: np.ndarray) -> np.ndarray:
    """Decode a [T, N, d_emb] array frame by frame (no autoregressive feedback)."""
    embs = np.asarray(embs, dtype=np.float64)
    if embs.ndim != 3 or embs.shape[2] != dec.d_emb:
        raise ValueError(f"expected [T, N, {dec.d_emb}] embeddings, got {embs.shape}")
    return np.stack([decode_frame(dec, frame) for frame in embs])


def decode_sequence(dec: FrozenDecoder, embs: EmbeddingSequence) -> VelocitySequence:
    return VelocitySequence(decode_array(dec, embs.values))


def decode_with_adjoint(dec: FrozenDecoder, embs: np.ndarray):
    """Decode and return a closure mapping dL/dU back to dL/d(embeddings).

    ReLU subgradient at exactly zero is taken as zero.
    """
    acts = _apply(dec, embs, keep=True)

    def backward(grad_out: np.ndarray) -> np.ndarray:
        g = grad_out
        for layer, out in zip(reversed(dec.layers), reversed(acts[1:])):
            if layer.activation == "RELU":
                g = g * (out > 0.0)
            g = g @ layer.weight.T
        return g

    return acts[-1], backward


def save_decoder(dec: FrozenDecoder, directory) -> Path:
    """Write the decoder as a JSON manifest plus PST1 weight files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    layers = []
    for k, layer in enumerate(dec.layers):
        wf, bf = f"layer{k}_weight.pst", f"layer{k}_bias.pst"
        write_tensor(directory / wf, layer.weight)
        write_tensor(directory / bf, layer.bias)
        rows, cols = layer.weight.shape
        layers.append({"rows": rows, "cols": cols, "activation": layer.activation,
                       "weight_file": wf, "bias_file": bf})
    manifest = {"kind": dec.kind, "d_emb": dec.d_emb, "d": dec.d, "layers": layers}
    path = directory / "decoder.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_decoder(manifest_path) -> FrozenDecoder:
    manifest_path = Path(manifest_path)
    spec = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    layers = []
    for entry in spec["layers"]:
        w = read_tensor(base / entry["weight_file"])
        b = read_tensor(base / entry["bias_file"])
        if w.shape != (entry["rows"], entry["cols"]):
            raise ValueError(f"{entry['weight_file']}: shape {w.shape} != manifest "
                             f"({entry['rows']}, {entry['cols']})")
        layers.append(Layer(w, b, entry["activation"]))
    dec = FrozenDecoder(tuple(layers), kind=spec["kind"])
    if dec.d_emb != spec["d_emb"] or dec.d != spec["d"]:
        raise ValueError("decoder manifest widths disagree with layer shapes")
    return dec
