"""Steering metrics and static-intervention baselines."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .datamodel import RepresentationTensor
from .objective import OptimizerConfig, StaticObjective, SteeringProblem, adam_minimize
from .oscillation import analytic_signal
from .representation import decoder_strength


class DegenerateTargetError(ValueError):
    """The target equals the original prediction, so frac% is undefined."""


def _vals(a) -> np.ndarray:
    return np.asarray(getattr(a, "values", a), dtype=np.float64)


def _x(a) -> np.ndarray:
    a = _vals(a)
    return a[..., 0] if a.ndim == 3 else a


def frac_pct(v_steer, v_orig, v_target, mask=None) -> float:
    """Percentage of the original-to-target MSE gap closed, over masked nodes and all frames.

    Inputs are per-frame, per-node scalar fields [T, N].
    """
    s, o, t = (np.asarray(v, dtype=np.float64) for v in (v_steer, v_orig, v_target))
    # always index, so an all-true mask takes the identical arithmetic path
    mask = np.ones(s.shape[1], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    s, o, t = s[:, mask], o[:, mask], t[:, mask]
    denom = np.mean((o - t) ** 2)
    if not denom > 0:
        raise DegenerateTargetError("original and target coincide on the evaluated nodes")
    return float((1.0 - np.mean((s - t) ** 2) / denom) * 100.0)


def per_node_frac(v_steer, v_orig, v_target) -> np.ndarray:
    """frac% per node over frames; NaN where the node's original already matches the target."""
    s, o, t = (np.asarray(v, dtype=np.float64) for v in (v_steer, v_orig, v_target))
    denom = np.mean((o - t) ** 2, axis=0)
    num = np.mean((s - t) ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(denom > 0, (1.0 - num / denom) * 100.0, np.nan)


def nrmse(v_steer, v_target) -> float:
    s, t = np.asarray(v_steer, dtype=np.float64), np.asarray(v_target, dtype=np.float64)
    rms_t = np.sqrt(np.mean(t * t))
    if not rms_t > 0:
        raise DegenerateTargetError("target RMS is zero")
    return float(np.sqrt(np.mean((s - t) ** 2)) / rms_t)


def corr(field_a, field_b) -> float:
    """Pearson correlation of the flattened fields."""
    a = np.asarray(field_a, dtype=np.float64).ravel()
    b = np.asarray(field_b, dtype=np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("correlation undefined for a constant field")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


@dataclass
class MetricsReport:
    frac_pct_vx: float
    roi_pct_vx: float
    nrmse_vx: float
    corr_vxvy: float
    per_node_frac: np.ndarray = field(repr=False)
    fingerprint: str = ""

    def to_dict(self) -> dict:
        return {"frac_pct_vx": self.frac_pct_vx, "roi_pct_vx": self.roi_pct_vx,
                "nrmse_vx": self.nrmse_vx, "corr_vxvy": self.corr_vxvy,
                "fingerprint": self.fingerprint}


def evaluate(U_steer, U_orig, U_target, roi=None, fingerprint: str = "") -> MetricsReport:
    s, o, t = _vals(U_steer), _vals(U_orig), _vals(U_target)
    sx, ox, tx = s[..., 0], o[..., 0], t[..., 0]
    mask = np.ones(sx.shape[1], dtype=bool) if roi is None else np.asarray(roi, dtype=bool)
    return MetricsReport(
        frac_pct_vx=frac_pct(sx, ox, tx),
        roi_pct_vx=frac_pct(sx, ox, tx, mask),
        nrmse_vx=nrmse(sx, tx),
        corr_vxvy=corr(s[..., :2], t[..., :2]),
        per_node_frac=per_node_frac(sx, ox, tx),
        fingerprint=fingerprint,
    )


def fingerprint(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# static baselines

@dataclass
class StaticIntervention:
    kind: str
    features: list
    values: list

    def __post_init__(self):
        if self.kind not in ("SCALE", "ADDITIVE", "CLAMP"):
            raise ValueError(f"unknown static kind {self.kind!r}")
        self.features = [int(f) for f in self.features]
        self.values = [float(v) for v in self.values]
        if len(set(self.features)) != len(self.features) or len(self.features) > 10:
            raise ValueError("static features must be distinct and at most 10")
        if len(self.values) != len(self.features):
            raise ValueError("need one value per feature")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "features": self.features, "values": self.values}


def spectral_concentration(series) -> float:
    """Share of mean-removed DFT power in the peak bin and its two neighbours."""
    x = np.asarray(series, dtype=np.float64)
    power = np.abs(np.fft.rfft(x - x.mean())) ** 2
    total = power.sum()
    if total <= 0:
        return 0.0
    k = int(np.argmax(power))
    return float(power[max(k - 1, 0):k + 2].sum() / total)


def static_scores(X, gmap) -> np.ndarray:
    """amplitude * decoder gain * spectral concentration, per feature."""
    X = _vals(X)
    means = X.mean(axis=1)
    gain = decoder_strength(gmap) if gmap is not None else np.ones(X.shape[2])
    scores = np.empty(X.shape[2])
    for f in range(X.shape[2]):
        _, env = analytic_signal(means[:, f])
        scores[f] = env.mean() * gain[f] * spectral_concentration(means[:, f])
    return scores


def select_static_features(X, gmap, k: int = 10) -> list[int]:
    scores = static_scores(X, gmap)
    order = sorted(range(len(scores)), key=lambda f: (-scores[f], f))
    return order[:k]


def apply_static(X, intervention: StaticIntervention):
    X_arr = _vals(X)
    D = X_arr.shape[2]
    if any(not 0 <= f < D for f in intervention.features):
        raise IndexError("static feature index out of range")
    out = X_arr.copy()
    for f, v in zip(intervention.features, intervention.values):
        if intervention.kind == "SCALE":
            out[:, :, f] *= v
        elif intervention.kind == "ADDITIVE":
            out[:, :, f] += v
        else:
            out[:, :, f] = v
    if isinstance(X, RepresentationTensor):
        return RepresentationTensor(out, X.map_kind, encoded=False)
    return out


def optimize_static(kind: str, problem: SteeringProblem, features, cfg: OptimizerConfig | None = None):
    """Jointly optimize one scalar per feature against the composite loss.

    Returns (StaticIntervention, OptimizeResult).
    """
    obj = StaticObjective(problem, kind, list(features))
    res = adam_minimize(obj.loss_and_grad, obj.initial(), cfg)
    return StaticIntervention(kind, obj.features, res.theta.tolist()), res
