"""Representation maps g / g^-1: sparse autoencoder, PCA, identity.

All three inverse maps are affine (SAE decoder, PCA back-projection,
identity), which the steering gradients rely on.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datamodel import EmbeddingSequence, MapKind, RepresentationTensor, read_tensor, write_tensor

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class SaeModel:
    W_enc: np.ndarray  # [d_emb, d_hid]
    b_enc: np.ndarray  # [d_hid]
    W_dec: np.ndarray  # [d_hid, d_emb]
    b_dec: np.ndarray  # [d_emb]
    kappa: int = 8
    lambda_sparsity: float = 3e-4

    kind = MapKind.SAE

    def __post_init__(self):
        for name in ("W_enc", "b_enc", "W_dec", "b_dec"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        d_emb, d_hid = self.W_enc.shape
        if self.W_dec.shape != (d_hid, d_emb) or self.b_enc.shape != (d_hid,) or self.b_dec.shape != (d_emb,):
            raise ValueError("inconsistent SAE parameter shapes")
        if d_hid != self.kappa * d_emb:
            raise ValueError(f"d_hid={d_hid} != kappa*d_emb={self.kappa * d_emb}")

    @property
    def d_emb(self) -> int:
        return self.W_enc.shape[0]

    @property
    def width(self) -> int:
        return self.W_enc.shape[1]

    @property
    def decoder_rows(self) -> np.ndarray:
        return self.W_dec

    @property
    def inverse_offset(self) -> np.ndarray:
        return self.b_dec


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray  # [d_emb]
    components: np.ndarray  # [d_emb, D_pca], orthonormal columns
    explained_variance: np.ndarray  # [D_pca]

    kind = MapKind.PCA

    def __post_init__(self):
        for name in ("mean", "components", "explained_variance"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def d_emb(self) -> int:
        return self.components.shape[0]

    @property
    def width(self) -> int:
        return self.components.shape[1]

    @property
    def decoder_rows(self) -> np.ndarray:
        return self.components.T

    @property
    def inverse_offset(self) -> np.ndarray:
        return self.mean


@dataclass(frozen=True)
class IdentityMap:
    d_emb: int

    kind = MapKind.IDENTITY

    @property
    def width(self) -> int:
        return self.d_emb

    @property
    def decoder_rows(self) -> np.ndarray:
        return np.eye(self.d_emb)

    @property
    def inverse_offset(self) -> np.ndarray:
        return np.zeros(self.d_emb)


@dataclass(frozen=True)
class LatentMap:
    """Identity in a known latent basis: g(h) = h M^+, g^-1(X) = X M.

    Used with synthetic data, where the mixing matrix M is ground truth.
    """

    mixing: np.ndarray  # [D, d_emb]
    analysis: np.ndarray = field(init=False)

    kind = MapKind.IDENTITY

    def __post_init__(self):
        m = np.array(self.mixing, dtype=np.float64)
        m.setflags(write=False)
        object.__setattr__(self, "mixing", m)
        object.__setattr__(self, "analysis", np.linalg.pinv(m))

    @property
    def d_emb(self) -> int:
        return self.mixing.shape[1]

    @property
    def width(self) -> int:
        return self.mixing.shape[0]

    @property
    def decoder_rows(self) -> np.ndarray:
        return self.mixing

    @property
    def inverse_offset(self) -> np.ndarray:
        return np.zeros(self.d_emb)


RepresentationMap = SaeModel | PcaModel | IdentityMap | LatentMap


def _check_width(x: np.ndarray, width: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != width:
        raise ValueError(f"{what}: last dimension {x.shape[-1]} != {width}")
    return x


def sae_encode(m: SaeModel, h) -> np.ndarray:
    h = _check_width(h, m.d_emb, "sae_encode")
    return np.maximum((h - m.b_dec) @ m.W_enc + m.b_enc, 0.0)


def sae_decode(m: SaeModel, z) -> np.ndarray:
    z = _check_width(z, m.width, "sae_decode")
    return z @ m.W_dec + m.b_dec


@dataclass
class SaeTrainConfig:
    kappa: int = 8
    lambda_sparsity: float = 3e-4
    lr: float = 1e-3
    batch: int = 128
    max_epochs: int = 60
    patience: int = 5
    seed: int = 0
    val_fraction: float = 0.1


@dataclass
class SaeTrainLog:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    max_row_norm_error: float = 0.0
    steps: int = 0
    best_epoch: int = 0
    val_relative_error: float = float("nan")  # best model on the held-out split
    val_zero_fraction: float = float("nan")


def _normalize_rows(w: np.ndarray) -> None:
    w /= np.linalg.norm(w, axis=1, keepdims=True)


def sae_loss(params, h: np.ndarray, lam: float) -> tuple[float, float]:
    """Mean over samples of (squared reconstruction error, L1 code norm)."""
    W_enc, b_enc, W_dec, b_dec = params
    z = np.maximum((h - b_dec) @ W_enc + b_enc, 0.0)
    err = z @ W_dec + b_dec - h
    return float(np.mean(np.sum(err * err, axis=1))), float(np.mean(np.sum(z, axis=1)))


def sae_train(samples, cfg: SaeTrainConfig | None = None, log_out: SaeTrainLog | None = None) -> SaeModel:
    """Train an SAE with Adam, per-step decoder-row renormalization and early stopping.

    Samples are split once into a fixed held-out fraction; training stops when the
    held-out reconstruction loss has not improved for `patience` epochs, and the
    best-epoch parameters are returned.
    """
    cfg = cfg or SaeTrainConfig()
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("samples must be [M, d_emb]")
    M, d = x.shape
    if M < cfg.batch:
        raise ValueError(f"need at least batch={cfg.batch} samples, got {M}")
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(M)
    n_val = max(1, int(round(cfg.val_fraction * M)))
    val, train = x[order[:n_val]], x[order[n_val:]]
    if len(train) < cfg.batch:
        raise ValueError("training split smaller than one batch")

    d_hid = cfg.kappa * d
    scale = 1.0 / np.sqrt(d)
    W_dec = rng.uniform(-scale, scale, (d_hid, d))
    _normalize_rows(W_dec)
    W_enc = rng.uniform(-scale, scale, (d, d_hid))
    b_enc = np.zeros(d_hid)
    b_dec = train.mean(axis=0)
    params = [W_enc, b_enc, W_dec, b_dec]
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    lam = cfg.lambda_sparsity
    log_out = log_out if log_out is not None else SaeTrainLog()

    best = (np.inf, [p.copy() for p in params])
    stale = 0
    step = 0
    for epoch in range(cfg.max_epochs):
        perm = rng.permutation(len(train))
        running = 0.0
        for start in range(0, len(train) - cfg.batch + 1, cfg.batch):
            h = train[perm[start:start + cfg.batch]]
            B = len(h)
            c = h - b_dec
            pre = c @ W_enc + b_enc
            z = np.maximum(pre, 0.0)
            err = z @ W_dec + b_dec - h
            loss = np.sum(err * err) / B + lam * np.sum(z) / B
            if not np.isfinite(loss):
                raise TrainingDiverged(f"SAE loss became {loss} at epoch {epoch}, step {step}")
            running += loss * B
            g_out = 2.0 * err / B
            g_W_dec = z.T @ g_out
            g_z = g_out @ W_dec.T + lam / B
            g_pre = g_z * (pre > 0.0)
            g_W_enc = c.T @ g_pre
            g_b_enc = g_pre.sum(axis=0)
            g_b_dec = g_out.sum(axis=0) - (g_pre @ W_enc.T).sum(axis=0)
            step += 1
            c1, c2 = 1.0 - b1**step, 1.0 - b2**step
            for p, g, mo, ve in zip(params, (g_W_enc, g_b_enc, g_W_dec, g_b_dec), m1, m2):
                mo *= b1
                mo += (1.0 - b1) * g
                ve *= b2
                ve += (1.0 - b2) * g * g
                p -= cfg.lr * (mo / c1) / (np.sqrt(ve / c2) + eps)
            _normalize_rows(W_dec)
            dev = float(np.max(np.abs(np.linalg.norm(W_dec, axis=1) - 1.0)))
            log_out.max_row_norm_error = max(log_out.max_row_norm_error, dev)
        recon, _ = sae_loss(params, val, lam)
        log_out.train_loss.append(running / len(train))
        log_out.val_loss.append(recon)
        log.debug("sae epoch %d train %.6g val %.6g", epoch, log_out.train_loss[-1], recon)
        if recon < best[0]:
            best = (recon, [p.copy() for p in params])
            log_out.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    log_out.steps = step
    W_enc, b_enc, W_dec, b_dec = best[1]
    model = SaeModel(W_enc, b_enc, W_dec, b_dec, kappa=cfg.kappa, lambda_sparsity=lam)
    if len(val) > 1:
        log_out.val_relative_error = reconstruction_error(model, val)
    log_out.val_zero_fraction = zero_fraction(model, val)
    return model


def reconstruction_error(m: SaeModel, samples) -> float:
    """Relative reconstruction error ||h_hat - h|| / ||h - mean(h)||."""
    h = np.asarray(samples, dtype=np.float64)
    err = sae_decode(m, sae_encode(m, h)) - h
    return float(np.linalg.norm(err) / np.linalg.norm(h - h.mean(axis=0)))


def zero_fraction(m: SaeModel, samples) -> float:
    """Fraction of code entries that are exactly 0.0."""
    return float(np.mean(sae_encode(m, samples) == 0.0))


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so each column's largest-magnitude entry is positive (first index on ties)."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def pca_fit(samples, D_pca: int) -> PcaModel:
    x = np.asarray(samples, dtype=np.float64)
    M, d = x.shape
    if not 1 <= D_pca <= min(M, d):
        raise ValueError(f"D_pca={D_pca} outside [1, {min(M, d)}]")
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    comps = _fix_signs(vt[:D_pca].T)
    return PcaModel(mean, comps, s[:D_pca] ** 2 / max(M - 1, 1))


def forward_array(gmap, h: np.ndarray) -> np.ndarray:
    h = _check_width(h, gmap.d_emb, "forward")
    if isinstance(gmap, SaeModel):
        return sae_encode(gmap, h)
    if isinstance(gmap, PcaModel):
        return (h - gmap.mean) @ gmap.components
    if isinstance(gmap, LatentMap):
        return h @ gmap.analysis
    return h.copy()


def inverse_array(gmap, X: np.ndarray) -> np.ndarray:
    X = _check_width(X, gmap.width, "inverse")
    if isinstance(gmap, SaeModel):
        return sae_decode(gmap, X)
    if isinstance(gmap, PcaModel):
        return X @ gmap.components.T + gmap.mean
    if isinstance(gmap, LatentMap):
        return X @ gmap.mixing
    return X.copy()


def forward(gmap, embs: EmbeddingSequence) -> RepresentationTensor:
    return RepresentationTensor(forward_array(gmap, embs.values), gmap.kind)


def inverse(gmap, X: RepresentationTensor, t0: int = 0) -> EmbeddingSequence:
    return EmbeddingSequence(inverse_array(gmap, X.values), t0=t0)


def decoder_strength(gmap) -> np.ndarray:
    """Per-feature decoder strength used in pair ranking and static selection.

    SAE: decoder-row norm; PCA: loading norm (sqrt of explained variance);
    identity: 1.
    """
    if isinstance(gmap, SaeModel):
        return np.linalg.norm(gmap.W_dec, axis=1)
    if isinstance(gmap, PcaModel):
        return np.sqrt(gmap.explained_variance)
    return np.ones(gmap.width)


def save_map(gmap, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest: dict = {"kind": gmap.kind.value, "d_emb": gmap.d_emb, "width": gmap.width}
    if isinstance(gmap, SaeModel):
        manifest.update(kappa=gmap.kappa, lambda_sparsity=gmap.lambda_sparsity, files={})
        for name in ("W_enc", "b_enc", "W_dec", "b_dec"):
            write_tensor(directory / f"{name}.pst", getattr(gmap, name))
            manifest["files"][name] = f"{name}.pst"
    elif isinstance(gmap, PcaModel):
        manifest["files"] = {}
        for name in ("mean", "components", "explained_variance"):
            write_tensor(directory / f"{name}.pst", getattr(gmap, name))
            manifest["files"][name] = f"{name}.pst"
    elif isinstance(gmap, LatentMap):
        write_tensor(directory / "mixing.pst", gmap.mixing)
        manifest.update(latent_basis=True, files={"mixing": "mixing.pst"})
    path = directory / "model.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_map(directory):
    directory = Path(directory)
    path = directory / "model.json"
    if not path.exists():
        raise FileNotFoundError(f"model manifest missing: {path}")
    spec = json.loads(path.read_text())
    files = {k: read_tensor(directory / v) for k, v in spec.get("files", {}).items()}
    kind = MapKind(spec["kind"])
    if kind is MapKind.SAE:
        return SaeModel(files["W_enc"], files["b_enc"], files["W_dec"], files["b_dec"],
                        kappa=spec["kappa"], lambda_sparsity=spec["lambda_sparsity"])
    if kind is MapKind.PCA:
        return PcaModel(files["mean"], files["components"], files["explained_variance"])
    if spec.get("latent_basis"):
        return LatentMap(files["mixing"])
    return IdentityMap(spec["d_emb"])
