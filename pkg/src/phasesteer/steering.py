"""Phase-offset parameterization, pairwise coefficient rotation and reassembly."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import RepresentationTensor, VelocitySequence
from .modes import ModeDecomposition, reconstruct
from .representation import inverse_array
from .surrogate import decode_array


@dataclass(frozen=True)
class CosineDictionary:
    """Unit-norm columns cos(2 pi m t / (H+1)), m = 1..K, t = 0..H."""

    B: np.ndarray

    @classmethod
    def build(cls, H: int, K_basis: int = 6) -> "CosineDictionary":
        if K_basis < 0 or H < 2:
            raise ValueError("need H >= 2 and K_basis >= 0")
        t = np.arange(H + 1)[:, None]
        m = np.arange(1, K_basis + 1)[None, :]
        B = np.cos(2 * np.pi * m * t / (H + 1))
        B = B / np.linalg.norm(B, axis=0) if K_basis else B
        B.setflags(write=False)
        return cls(B)

    @property
    def K_basis(self) -> int:
        return self.B.shape[1]

    @property
    def horizon(self) -> int:
        return self.B.shape[0] - 1


@dataclass
class SteeringParams:
    a: np.ndarray  # [P] slope, rad/frame
    b: np.ndarray  # [P] offset, rad
    w: np.ndarray  # [P, K_basis]

    @classmethod
    def zeros(cls, P: int, K_basis: int) -> "SteeringParams":
        return cls(np.zeros(P), np.zeros(P), np.zeros((P, K_basis)))

    @property
    def P(self) -> int:
        return len(self.a)

    def flatten(self) -> np.ndarray:
        """Per-pair blocks (a_k, b_k, w_k...), length P * (K_basis + 2)."""
        return np.column_stack([self.a, self.b, self.w]).ravel()

    @classmethod
    def unflatten(cls, theta, P: int, K_basis: int) -> "SteeringParams":
        block = np.asarray(theta, dtype=np.float64).reshape(P, K_basis + 2)
        return cls(block[:, 0].copy(), block[:, 1].copy(), block[:, 2:].copy())

    def to_dict(self) -> dict:
        return {"pairs": [{"a": float(a), "b": float(b), "w": [float(v) for v in w]}
                          for a, b, w in zip(self.a, self.b, self.w)]}

    @classmethod
    def from_dict(cls, d: dict) -> "SteeringParams":
        pairs = d["pairs"]
        return cls(np.array([p["a"] for p in pairs], dtype=float),
                   np.array([p["b"] for p in pairs], dtype=float),
                   np.array([p["w"] for p in pairs], dtype=float).reshape(len(pairs), -1))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "SteeringParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class SteeredState:
    X_prime: RepresentationTensor
    U_steer: VelocitySequence
    phase_trajectories: np.ndarray  # [P, (H+1)]


def phase_offset(params: SteeringParams, dictionary: CosineDictionary, k: int) -> np.ndarray:
    if not 0 <= k < params.P:
        raise IndexError(f"pair index {k} out of range for P={params.P}")
    t = np.arange(dictionary.horizon + 1)
    return params.a[k] * t + params.b[k] + dictionary.B @ params.w[k]


def phase_trajectories(params: SteeringParams, dictionary: CosineDictionary) -> np.ndarray:
    t = np.arange(dictionary.horizon + 1)
    return params.a[:, None] * t + params.b[:, None] + params.w @ dictionary.B.T


def rotate_coefficients(ci: np.ndarray, cj: np.ndarray, dphi: np.ndarray):
    """Rotate each mode's (C_i, C_j) plane by dphi(t)."""
    c = np.cos(dphi)[:, None]
    s = np.sin(dphi)[:, None]
    return c * ci - s * cj, s * ci + c * cj


def rotate_pair(md_i: ModeDecomposition, md_j: ModeDecomposition, dphi):
    dphi = np.asarray(dphi, dtype=np.float64)
    if md_i.coeffs.shape != md_j.coeffs.shape:
        raise ValueError("paired decompositions must share rank and horizon")
    if dphi.shape != (md_i.coeffs.shape[0],):
        raise ValueError("phase offset length must match the horizon")
    return rotate_coefficients(md_i.coeffs, md_j.coeffs, dphi)


def steered_fields(X: np.ndarray, pairs, decomps: dict, params: SteeringParams,
                   dictionary: CosineDictionary) -> tuple[np.ndarray, np.ndarray]:
    """X' with only the paired feature slices replaced; also the phase trajectories."""
    phases = phase_trajectories(params, dictionary)
    X_prime = np.array(X, dtype=np.float64, copy=True)
    for k, pair in enumerate(pairs):
        i, j = pair_indices(pair)
        for f in (i, j):
            if f not in decomps:
                raise KeyError(f"no mode decomposition for feature {f}")
        ci, cj = rotate_pair(decomps[i], decomps[j], phases[k])
        X_prime[:, :, i] = reconstruct(decomps[i], ci)
        X_prime[:, :, j] = reconstruct(decomps[j], cj)
    return X_prime, phases


def apply_steering(X, pairs, decomps: dict, params: SteeringParams, dictionary: CosineDictionary,
                   gmap, decoder) -> SteeredState:
    X_arr = np.asarray(getattr(X, "values", X))
    kind = getattr(X, "map_kind", gmap.kind)
    X_prime, phases = steered_fields(X_arr, pairs, decomps, params, dictionary)
    U = decode_array(decoder, inverse_array(gmap, X_prime))
    return SteeredState(RepresentationTensor(X_prime, kind, encoded=False), VelocitySequence(U), phases)


def pair_indices(pair) -> tuple[int, int]:
    if hasattr(pair, "i"):
        return int(pair.i), int(pair.j)
    return int(pair[0]), int(pair[1])
