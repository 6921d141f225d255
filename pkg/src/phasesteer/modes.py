"""Per-feature truncated SVD of mean-removed space-time fields."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import read_tensor, write_tensor

GRAM_LIMIT = 256
# Gram-derived singular vectors lose accuracy as (s_0 / s_k)^2; below this
# relative level the LAPACK path is used instead.
GRAM_REL_FLOOR = 1e-5


@dataclass(frozen=True)
class ModeDecomposition:
    feature: int
    mu: np.ndarray  # [N]
    phi: np.ndarray  # [N, r]
    coeffs: np.ndarray  # [(H+1), r]
    singular_values: np.ndarray  # [r]

    @property
    def rank(self) -> int:
        return self.phi.shape[1]


def _fix_signs(v: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return signs


def _svd_full(Z: np.ndarray, r: int):
    _, s, vt = np.linalg.svd(Z, full_matrices=False)
    return s[:r], vt[:r].T


def _svd_gram(Z: np.ndarray, r: int):
    T, N = Z.shape
    if T <= N:
        evals, evecs = np.linalg.eigh(Z @ Z.T)
        order = np.argsort(evals)[::-1][:r]
        s = np.sqrt(np.clip(evals[order], 0.0, None))
        if s[0] == 0 or s[-1] < GRAM_REL_FLOOR * s[0]:
            return None
        return s, (Z.T @ evecs[:, order]) / s
    evals, evecs = np.linalg.eigh(Z.T @ Z)
    order = np.argsort(evals)[::-1][:r]
    s = np.sqrt(np.clip(evals[order], 0.0, None))
    if s[0] == 0 or s[-1] < GRAM_REL_FLOOR * s[0]:
        return None
    return s, evecs[:, order]


def decompose_field(field: np.ndarray, r: int, feature: int = 0, method: str = "auto") -> ModeDecomposition:
    """Truncated SVD of one feature field [(H+1), N].

    method: "auto" (Gram eigendecomposition for small problems, LAPACK SVD
    otherwise or when the retained spectrum is too ill-conditioned), "gram",
    or "svd".
    """
    field = np.asarray(field, dtype=np.float64)
    T, N = field.shape
    if not 1 <= r <= min(T, N):
        raise ValueError(f"rank r={r} outside [1, {min(T, N)}]")
    mu = field.mean(axis=0)
    Z = field - mu
    result = None
    if method == "gram" or (method == "auto" and min(T, N) <= GRAM_LIMIT):
        result = _svd_gram(Z, r)
        if result is None and method == "gram":
            raise np.linalg.LinAlgError("Gram path cannot resolve the retained singular spectrum")
    if result is None:
        result = _svd_full(Z, r)
    s, phi = result
    phi = phi * _fix_signs(phi)
    coeffs = Z @ phi
    return ModeDecomposition(feature, mu, phi, coeffs, s)


def decompose(X, f: int, r: int = 8, method: str = "auto") -> ModeDecomposition:
    X = np.asarray(getattr(X, "values", X))
    if not 0 <= f < X.shape[2]:
        raise IndexError(f"feature {f} out of range for width {X.shape[2]}")
    return decompose_field(X[:, :, f], r, f, method)


def reconstruct(md: ModeDecomposition, coeffs=None) -> np.ndarray:
    """Feature field coeffs @ phi^T + mu; original coefficients when omitted."""
    c = md.coeffs if coeffs is None else np.asarray(coeffs, dtype=np.float64)
    if c.ndim != 2 or c.shape[1] != md.rank:
        raise ValueError(f"coefficients must be [T, {md.rank}], got {c.shape}")
    return c @ md.phi.T + md.mu


def save_decompositions(decomps: dict, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for f, md in sorted(decomps.items()):
        write_tensor(directory / f"feature{f}_mu.pst", md.mu)
        write_tensor(directory / f"feature{f}_phi.pst", md.phi)
        write_tensor(directory / f"feature{f}_coeffs.pst", md.coeffs)
        write_tensor(directory / f"feature{f}_sv.pst", md.singular_values)


def load_decomposition(directory, f: int) -> ModeDecomposition:
    directory = Path(directory)
    return ModeDecomposition(
        f,
        read_tensor(directory / f"feature{f}_mu.pst"),
        read_tensor(directory / f"feature{f}_phi.pst"),
        read_tensor(directory / f"feature{f}_coeffs.pst"),
        read_tensor(directory / f"feature{f}_sv.pst"),
    )
