"""Synthetic oscillatory-surrogate datasets with planted quadrature pairs.

Latent features 2m and 2m+1 carry A_m cos(w_m t + psi_m) and A_m sin(w_m t + psi_m)
times a Gaussian footprint inside the wake ROI; the remaining latents are slow
non-oscillatory drifts. Embeddings are a fixed mixing of the latents plus
Gaussian noise, and the frozen decoder is linear with the planted pairs
dominating the velocity signal. Every quantity is an analytic function of
the absolute frame index, so shifted targets exist beyond the horizon.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .datamodel import EmbeddingSequence, MeshGeometry, VelocitySequence, read_tensor, write_tensor
from .surrogate import FrozenDecoder, decode_array, load_decoder, save_decoder

DOMAIN = (0.0, 1.6, 0.0, 0.41)
WAKE_ROI = (0.4, 1.4, 0.10, 0.31)
OBSTACLE_CENTER = (0.2, 0.2)
OBSTACLE_RADIUS = 0.05

# Footprint widths as a fraction of the domain extent along each axis.
FOOTPRINT_WIDTH = 0.10
COLOCATED_MEAN = True
MEAN_LEVEL = 1.5


@dataclass
class SynthConfig:
    N: int = 400
    H: int = 120
    d_emb: int = 32
    n_pairs_true: int = 3
    n_distractors: int = 10
    frequencies: tuple = (2 * np.pi / 50, 2 * np.pi / 57, 2 * np.pi / 64)
    amplitudes: tuple = (3.0, 2.4, 1.8)
    noise_sigma: float = 0.0
    seed: int = 0
    mixing: str = "ORTHONORMAL"
    L_target: int = 8
    t0: int = 140

    def __post_init__(self):
        self.frequencies = tuple(float(w) for w in self.frequencies)
        self.amplitudes = tuple(float(a) for a in self.amplitudes)
        self.validate()

    @property
    def d_true(self) -> int:
        return 2 * self.n_pairs_true + self.n_distractors

    def validate(self) -> None:
        if self.N < 1 or self.d_emb < 1 or self.H < 2:
            raise ValueError("need N >= 1, d_emb >= 1, H >= 2")
        if self.d_true > self.d_emb:
            raise ValueError(f"{self.d_true} latents cannot be injectively mixed into d_emb={self.d_emb}")
        if len(self.frequencies) != self.n_pairs_true or len(self.amplitudes) != self.n_pairs_true:
            raise ValueError("need one frequency and one amplitude per planted pair")
        if any(not 0.0 < w < np.pi for w in self.frequencies):
            raise ValueError("planted frequencies must lie strictly between 0 and pi rad/frame")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.mixing not in ("ORTHONORMAL", "RANDOM_DENSE"):
            raise ValueError(f"unknown mixing {self.mixing!r}")
        if abs(self.L_target) >= self.H / 2:
            raise ValueError("|L_target| must be < H/2")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["frequencies"] = list(self.frequencies)
        d["amplitudes"] = list(self.amplitudes)
        return d


@dataclass
class LatentProcess:
    """Analytic latent field: evaluate(t_abs) -> [T, N, D_true]."""

    frequencies: np.ndarray
    amplitudes: np.ndarray
    phases: np.ndarray
    pair_footprints: np.ndarray  # [n_pairs, N]
    drift_footprints: np.ndarray  # [n_distractors, N]
    drift_poly: np.ndarray  # [n_distractors, 3]
    drift_slow: np.ndarray  # [n_distractors, n_slow, 3] = (amplitude, period, phase)
    H: int
    t0: int

    def drift(self, t_abs: np.ndarray) -> np.ndarray:
        tau = (t_abs - self.t0) / self.H  # 0..1 over the horizon
        out = np.empty((len(self.drift_poly), len(t_abs)))
        for q, (c0, c1, c2) in enumerate(self.drift_poly):
            series = c0 + c1 * tau + c2 * tau**2
            for amp, period, phase in self.drift_slow[q]:
                series = series + amp * np.cos(2 * np.pi * t_abs / period + phase)
            out[q] = series
        return out

    def evaluate(self, t_abs, planted_only: bool = False) -> np.ndarray:
        t_abs = np.asarray(t_abs, dtype=np.float64)
        n_pairs = len(self.frequencies)
        n_drift = len(self.drift_poly)
        N = self.pair_footprints.shape[1] if n_pairs else self.drift_footprints.shape[1]
        out = np.zeros((len(t_abs), N, 2 * n_pairs + n_drift))
        for m in range(n_pairs):
            arg = self.frequencies[m] * t_abs + self.phases[m]
            out[:, :, 2 * m] = self.amplitudes[m] * np.cos(arg)[:, None] * self.pair_footprints[m]
            out[:, :, 2 * m + 1] = self.amplitudes[m] * np.sin(arg)[:, None] * self.pair_footprints[m]
        if n_drift and not planted_only:
            series = self.drift(t_abs)
            out[:, :, 2 * n_pairs:] = np.einsum("qt,qn->tnq", series, self.drift_footprints)
        return out


@dataclass
class SynthDataset:
    config: SynthConfig
    embeddings: EmbeddingSequence
    decoder: FrozenDecoder
    geometry: MeshGeometry
    true_pairs: list  # [(i, j, omega)]
    true_latents: np.ndarray  # [(H+1), N, D_true]
    mixing: np.ndarray  # [D_true, d_emb]
    process: LatentProcess = field(repr=False)

    @property
    def frames(self) -> np.ndarray:
        return self.config.t0 + np.arange(self.config.H + 1)

    def embed(self, latents: np.ndarray, t_abs) -> np.ndarray:
        """Mix latents into embeddings and add the frame-keyed noise."""
        return latents @ self.mixing + frame_noise(self.config, t_abs)


def grid_positions(n: int, domain=DOMAIN, center=OBSTACLE_CENTER, radius=OBSTACLE_RADIUS) -> np.ndarray:
    """Regular grid over the domain; nodes inside the obstacle are pushed to its rim."""
    x0, x1, y0, y1 = domain
    ny = max(1, int(round(np.sqrt(n))))
    nx = int(np.ceil(n / ny))
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pos = np.column_stack([gx.ravel(), gy.ravel()])[:n]
    offset = pos - np.asarray(center)
    r = np.hypot(offset[:, 0], offset[:, 1])
    inside = r < radius
    if np.any(inside):
        safe = np.where(r[inside] > 0, r[inside], 1.0)
        direction = offset[inside] / safe[:, None]
        direction[r[inside] == 0] = (1.0, 0.0)
        pos[inside] = np.asarray(center) + direction * radius * 1.0001
    return pos


def gaussian_footprint(pos: np.ndarray, center, widths) -> np.ndarray:
    d = (pos - np.asarray(center)) / np.asarray(widths)
    return np.exp(-0.5 * np.sum(d * d, axis=1))


def frame_noise(cfg: SynthConfig, t_abs) -> np.ndarray:
    """Embedding noise keyed by absolute frame so shifted frames reuse it."""
    t_abs = np.atleast_1d(np.asarray(t_abs, dtype=np.int64))
    out = np.zeros((len(t_abs), cfg.N, cfg.d_emb))
    if cfg.noise_sigma == 0:
        return out
    for k, t in enumerate(t_abs):
        rng = np.random.default_rng([cfg.seed, 0x5EED, int(t) + 2**31])
        out[k] = cfg.noise_sigma * rng.standard_normal((cfg.N, cfg.d_emb))
    return out


def _mixing_matrix(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((cfg.d_emb, cfg.d_true))
    if cfg.mixing == "ORTHONORMAL":
        q, r = np.linalg.qr(g)
        q = q * np.sign(np.diag(r))
        return q.T.copy()
    m = g.T / np.sqrt(cfg.d_emb)
    loaded = np.mean(np.abs(m) > 0, axis=0)
    if np.any(loaded < 0.8):
        raise RuntimeError("dense mixing failed the entanglement check")
    return m


def _latent_process(cfg: SynthConfig, pos: np.ndarray, rng: np.random.Generator) -> LatentProcess:
    x0, x1, y0, y1 = DOMAIN
    widths = (FOOTPRINT_WIDTH * (x1 - x0), FOOTPRINT_WIDTH * (y1 - y0))
    rx0, rx1, ry0, ry1 = WAKE_ROI
    n = cfg.n_pairs_true
    centers = []
    for m in range(n):
        cx = rx0 + (rx1 - rx0) * (m + 1) / (n + 1)
        cy = ry0 + (ry1 - ry0) * (0.3 if m % 2 == 0 else 0.7)
        centers.append((cx, cy))
    pair_fp = np.array([gaussian_footprint(pos, c, widths) for c in centers]).reshape(n, len(pos))
    phases = rng.uniform(-np.pi, np.pi, size=n)

    q = cfg.n_distractors
    d_centers = np.column_stack([rng.uniform(x0, x1, q), rng.uniform(y0, y1, q)])
    poly = np.column_stack([rng.uniform(-0.5, 0.5, q), rng.uniform(-0.3, 0.3, q),
                            rng.uniform(-0.2, 0.2, q)])
    # The first distractors sit on the planted footprints as a strong static
    # "mean flow" level on which the oscillation rides.
    n_mean = min(n, q) if COLOCATED_MEAN else 0
    for m in range(n_mean):
        d_centers[m] = centers[m]
        poly[m, 0] = MEAN_LEVEL * cfg.amplitudes[m]
    drift_fp = np.array([gaussian_footprint(pos, c, (1.5 * widths[0], 1.5 * widths[1]))
                         for c in d_centers]).reshape(q, len(pos))
    # band-limited part: periods of 4-8 horizons, far below planted frequencies
    n_slow = 2
    slow = np.stack([rng.uniform(0.02, 0.08, (q, n_slow)),
                     rng.uniform(4 * cfg.H, 8 * cfg.H, (q, n_slow)),
                     rng.uniform(-np.pi, np.pi, (q, n_slow))], axis=-1)
    return LatentProcess(np.array(cfg.frequencies), np.array(cfg.amplitudes), phases,
                         pair_fp, drift_fp, poly, slow.reshape(q, n_slow, 3), cfg.H, cfg.t0)


def _decoder(cfg: SynthConfig, mixing: np.ndarray, rng: np.random.Generator) -> FrozenDecoder:
    gain = np.zeros((cfg.d_true, 2))
    npl = 2 * cfg.n_pairs_true
    gain[:npl] = rng.uniform(0.5, 1.0, (npl, 2)) * rng.choice([-1.0, 1.0], (npl, 2))
    gain[npl:] = rng.uniform(-0.1, 0.1, (cfg.n_distractors, 2))
    if COLOCATED_MEAN:
        # the mean-flow level shapes the time-averaged velocity like the planted pairs do
        k = min(cfg.n_pairs_true, cfg.n_distractors)
        gain[npl:npl + k] = rng.uniform(0.5, 1.0, (k, 2)) * rng.choice([-1.0, 1.0], (k, 2))
    weight = np.linalg.pinv(mixing) @ gain
    return FrozenDecoder.linear(weight, np.array([0.5, 0.0]))


def generate(cfg: SynthConfig) -> SynthDataset:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    pos = grid_positions(cfg.N)
    geom = MeshGeometry(pos, WAKE_ROI, OBSTACLE_CENTER, OBSTACLE_RADIUS)
    process = _latent_process(cfg, pos, rng)
    mixing = _mixing_matrix(cfg, rng)
    decoder = _decoder(cfg, mixing, rng)
    frames = cfg.t0 + np.arange(cfg.H + 1)
    latents = process.evaluate(frames)
    emb = latents @ mixing + frame_noise(cfg, frames)
    pairs = [(2 * m, 2 * m + 1, cfg.frequencies[m]) for m in range(cfg.n_pairs_true)]
    latents.setflags(write=False)
    return SynthDataset(cfg, EmbeddingSequence(emb, t0=cfg.t0), decoder, geom, pairs,
                        latents, mixing, process)


def shifted_target(ds: SynthDataset, L_target: int) -> VelocitySequence:
    """Decode the surrogate's prediction evaluated L_target frames later."""
    H = ds.config.H
    if abs(L_target) >= H / 2:
        raise ValueError(f"shift {L_target} too large for horizon H={H}")
    frames = ds.frames + int(L_target)
    emb = ds.embed(ds.process.evaluate(frames), frames)
    return VelocitySequence(decode_array(ds.decoder, emb))


def original_velocity(ds: SynthDataset) -> VelocitySequence:
    return VelocitySequence(decode_array(ds.decoder, ds.embeddings.values))


def save_dataset(ds: SynthDataset, directory) -> Path:
    """Write embeddings, decoder, geometry, target and ground truth."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_tensor(directory / "embeddings.pst", ds.embeddings.values)
    save_decoder(ds.decoder, directory / "decoder")
    write_tensor(directory / "positions.pst", ds.geometry.positions)
    geometry = {"roi": list(ds.geometry.roi), "obstacle_center": list(ds.geometry.obstacle_center),
                "obstacle_radius": ds.geometry.obstacle_radius}
    (directory / "geometry.json").write_text(json.dumps(geometry, indent=2) + "\n")
    target = shifted_target(ds, ds.config.L_target)
    write_tensor(directory / "target.pst", target.values)
    write_tensor(directory / "true_latents.pst", ds.true_latents)
    write_tensor(directory / "mixing.pst", ds.mixing)
    truth = {
        "config": ds.config.to_dict(),
        "t0": ds.config.t0,
        "L_target": ds.config.L_target,
        "true_pairs": [{"i": i, "j": j, "omega": w} for i, j, w in ds.true_pairs],
        "phases": ds.process.phases.tolist(),
    }
    (directory / "truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    return directory


@dataclass
class LoadedDataset:
    """Dataset directory contents as consumed by the steering commands."""

    embeddings: EmbeddingSequence
    decoder: FrozenDecoder
    geometry: MeshGeometry
    target: VelocitySequence
    L_target: int
    truth: dict | None = None


def load_dataset(directory) -> LoadedDataset:
    directory = Path(directory)
    for name in ("embeddings.pst", "decoder/decoder.json", "positions.pst", "geometry.json", "target.pst"):
        if not (directory / name).exists():
            raise FileNotFoundError(f"dataset is missing {directory / name}")
    geo = json.loads((directory / "geometry.json").read_text())
    truth = None
    if (directory / "truth.json").exists():
        truth = json.loads((directory / "truth.json").read_text())
    t0 = truth["t0"] if truth else 0
    return LoadedDataset(
        embeddings=EmbeddingSequence(read_tensor(directory / "embeddings.pst"), t0=t0),
        decoder=load_decoder(directory / "decoder" / "decoder.json"),
        geometry=MeshGeometry(read_tensor(directory / "positions.pst"), tuple(geo["roi"]),
                              tuple(geo["obstacle_center"]), geo["obstacle_radius"]),
        target=VelocitySequence(read_tensor(directory / "target.pst")),
        L_target=int(truth["L_target"]) if truth else 0,
        truth=truth,
    )
