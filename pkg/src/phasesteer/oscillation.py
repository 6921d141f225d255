"""Hilbert phase analysis, quadrature pair filtering and pair ranking."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .representation import decoder_strength


@dataclass(frozen=True)
class FeatureSignal:
    feature: int
    series: np.ndarray
    phase: np.ndarray
    envelope: np.ndarray
    omega_hat: float


@dataclass(frozen=True)
class OscillatoryPair:
    i: int
    j: int
    omega: float
    coherence: float
    mean_phase_diff: float
    amplitude_score: float = 0.0
    decoder_score: float = 0.0
    footprint_score: float = 0.0
    rank_score: float = 0.0

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("a pair needs two distinct features")

    def to_dict(self) -> dict:
        return {k: (int(v) if k in ("i", "j") else float(v)) for k, v in self.__dict__.items()}


@dataclass
class PairFilterConfig:
    z_amp_min: float = 2.0
    eps_omega_rel: float = 0.10
    quad_tol: float = np.pi / 8
    coherence_min: float = 0.6
    edge_guard: int = 5
    top_P: int = 6

    def __post_init__(self):
        if min(self.z_amp_min, self.eps_omega_rel, self.quad_tol, self.coherence_min, self.edge_guard) < 0:
            raise ValueError("filter thresholds must be non-negative")
        if self.top_P < 1:
            raise ValueError("top_P must be >= 1")


def node_average(X, f: int) -> np.ndarray:
    X = _values(X)
    if not 0 <= f < X.shape[2]:
        raise IndexError(f"feature {f} out of range for width {X.shape[2]}")
    return X[:, :, f].mean(axis=1)


def hilbert_transform(series) -> np.ndarray:
    """Analytic signal via the one-sided spectrum (DC and Nyquist kept once)."""
    x = np.asarray(series, dtype=np.float64)
    n = len(x)
    spec = np.fft.fft(x)
    gain = np.zeros(n)
    gain[0] = 1.0
    if n % 2 == 0:
        gain[n // 2] = 1.0
        gain[1:n // 2] = 2.0
    else:
        gain[1:(n + 1) // 2] = 2.0
    return np.fft.ifft(spec * gain)


def analytic_signal(series) -> tuple[np.ndarray, np.ndarray]:
    """Instantaneous phase in (-pi, pi] and envelope of the mean-removed series."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or len(x) < 8:
        raise ValueError("analytic_signal needs a 1-D series of length >= 8")
    z = hilbert_transform(x - x.mean())
    phase = np.angle(z)
    phase[phase <= -np.pi] = np.pi
    return phase, np.abs(z)


def wrap(angle):
    """Map angles into (-pi, pi]."""
    out = np.mod(np.asarray(angle, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    return np.where(out <= -np.pi, np.pi, out)


def frequency_proxy(phase, edge_guard: int = 0) -> float:
    """Median absolute wrapped phase increment over the interior frames."""
    phase = np.asarray(phase, dtype=np.float64)
    if len(phase) < 2:
        raise ValueError("need at least two phase samples")
    inner = _interior(phase, edge_guard)
    if len(inner) < 2:
        inner = phase
    return float(np.median(np.abs(wrap(np.diff(inner)))))


def _interior(x, edge_guard: int):
    if edge_guard > 0 and len(x) > 2 * edge_guard:
        return x[edge_guard:len(x) - edge_guard]
    return x


def _values(X) -> np.ndarray:
    return np.asarray(getattr(X, "values", X), dtype=np.float64)


def feature_signals(X, edge_guard: int = 5) -> list[FeatureSignal]:
    X = _values(X)
    means = X.mean(axis=1)  # [T, D]
    out = []
    for f in range(X.shape[2]):
        phase, env = analytic_signal(means[:, f])
        out.append(FeatureSignal(f, means[:, f], phase, env, frequency_proxy(phase, edge_guard)))
    return out


def circular_mean(phase_i, phase_j, edge_guard: int = 0) -> complex:
    """Resultant of exp(i (theta_i - theta_j)) over the interior frames."""
    d = _interior(np.asarray(phase_i) - np.asarray(phase_j), edge_guard)
    return complex(np.mean(np.exp(1j * d)))


def amplitude_zscores(amplitudes) -> np.ndarray:
    """Robust z-scores (median / scaled MAD) across features.

    Falls back to mean / standard deviation when more than half the
    population shares one value (MAD = 0), e.g. dead SAE features.
    """
    a = np.asarray(amplitudes, dtype=np.float64)
    med = np.median(a)
    mad = 1.4826 * np.median(np.abs(a - med))
    if mad > 0:
        return (a - med) / mad
    sd = a.std()
    return (a - a.mean()) / sd if sd > 0 else np.zeros_like(a)


def _amplitude(sig: FeatureSignal, edge_guard: int) -> float:
    return float(np.mean(_interior(sig.envelope, edge_guard)))


def filter_pairs(X, cfg: PairFilterConfig | None = None, signals=None) -> list[OscillatoryPair]:
    """All oriented pairs passing the amplitude, frequency, quadrature and coherence gates."""
    cfg = cfg or PairFilterConfig()
    signals = signals if signals is not None else feature_signals(X, cfg.edge_guard)
    amps = np.array([_amplitude(s, cfg.edge_guard) for s in signals])
    z = amplitude_zscores(amps)
    strong = [s for s, zf in zip(signals, z) if zf >= cfg.z_amp_min and amps[s.feature] > 0]
    out = []
    for a_idx, si in enumerate(strong):
        for sj in strong[a_idx + 1:]:
            wi, wj = si.omega_hat, sj.omega_hat
            if not abs(wi - wj) < cfg.eps_omega_rel * max(wi, wj):
                continue
            resultant = circular_mean(si.phase, sj.phase, cfg.edge_guard)
            diff = float(np.angle(resultant))
            coh = abs(resultant)
            if abs(diff - np.pi / 2) <= cfg.quad_tol:
                lead, lag = si, sj
            elif abs(diff + np.pi / 2) <= cfg.quad_tol:
                lead, lag, diff = sj, si, -diff
            else:
                continue
            if coh < cfg.coherence_min:
                continue
            out.append(OscillatoryPair(lead.feature, lag.feature, 0.5 * (wi + wj), coh, diff))
    return sorted(out, key=lambda p: (min(p.i, p.j), max(p.i, p.j)))


def energy_map(X, f: int) -> np.ndarray:
    X = _values(X)
    if not 0 <= f < X.shape[2]:
        raise IndexError(f"feature {f} out of range for width {X.shape[2]}")
    return np.mean(X[:, :, f] ** 2, axis=0)


def footprint_overlap(e_i: np.ndarray, e_j: np.ndarray) -> float:
    denom = np.linalg.norm(e_i) * np.linalg.norm(e_j)
    return float(e_i @ e_j / denom) if denom > 0 else 0.0


# Min-max normalized metrics are mapped onto [RANK_FLOOR, 1] before the
# geometric mean, so being last on one metric does not zero a pair's score.
RANK_FLOOR = 0.1


def _minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi - lo <= 0:
        return np.ones_like(x)
    return RANK_FLOOR + (1.0 - RANK_FLOOR) * (x - lo) / (hi - lo)


def score_pairs(candidates, X, gmap, cfg: PairFilterConfig | None = None, signals=None) -> list[OscillatoryPair]:
    """Attach the four ranking metrics and the combined rank score."""
    cfg = cfg or PairFilterConfig()
    if not candidates:
        return []
    X = _values(X)
    signals = signals if signals is not None else feature_signals(X, cfg.edge_guard)
    strength = decoder_strength(gmap) if gmap is not None else np.ones(X.shape[2])
    energies = {}
    scored = []
    for p in candidates:
        for f in (p.i, p.j):
            if f not in energies:
                energies[f] = energy_map(X, f)
        amp = 0.5 * (_amplitude(signals[p.i], cfg.edge_guard) + _amplitude(signals[p.j], cfg.edge_guard))
        dec = 0.5 * (strength[p.i] + strength[p.j])
        foot = footprint_overlap(energies[p.i], energies[p.j])
        scored.append(replace(p, amplitude_score=amp, decoder_score=float(dec), footprint_score=foot))
    metrics = np.array([[p.coherence, p.amplitude_score, p.decoder_score,
                         min(max(p.footprint_score, 0.0), 1.0)] for p in scored])
    norm = np.column_stack([_minmax(metrics[:, c]) for c in range(4)])
    rank = np.prod(norm, axis=1) ** 0.25
    return [replace(p, rank_score=float(r)) for p, r in zip(scored, rank)]


def rank_pairs(candidates, X, gmap, cfg: PairFilterConfig | None = None, signals=None) -> list[OscillatoryPair]:
    """Score, sort (descending, ties by (i, j)), de-duplicate features, keep top_P."""
    cfg = cfg or PairFilterConfig()
    scored = score_pairs(candidates, X, gmap, cfg, signals)
    scored.sort(key=lambda p: (-p.rank_score, p.i, p.j))
    used: set[int] = set()
    chosen = []
    for p in scored:
        if p.i in used or p.j in used:
            continue
        chosen.append(p)
        used.update((p.i, p.j))
        if len(chosen) == cfg.top_P:
            break
    return chosen


def identify_pairs(X, gmap, cfg: PairFilterConfig | None = None) -> list[OscillatoryPair]:
    cfg = cfg or PairFilterConfig()
    signals = feature_signals(X, cfg.edge_guard)
    return rank_pairs(filter_pairs(X, cfg, signals), X, gmap, cfg, signals)
