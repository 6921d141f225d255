"""Run configuration: nested YAML sections mirroring the library modules."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .evaluation import fingerprint
from .objective import LossWeights, OptimizerConfig
from .oscillation import PairFilterConfig
from .representation import SaeTrainConfig
from .synthgen import SynthConfig


class ConfigError(ValueError):
    """Malformed or out-of-range configuration."""


REPRESENTATIONS = ("SAE", "PCA", "IDENTITY")

DEFAULTS: dict = {
    "seed": 0,
    "paths": {"dataset_dir": None, "model_dir": None},
    "synthgen": {
        "N": 400, "H": 120, "d_emb": 32, "n_pairs_true": 3, "n_distractors": 10,
        "periods": [50.0, 57.0, 64.0], "amplitudes": [3.0, 2.4, 1.8],
        "noise_sigma": 0.0, "mixing": "ORTHONORMAL", "L_target": 8, "t0": 140,
    },
    "representation": {
        "kind": "SAE",
        "D_pca": None,
        "sae": {"kappa": 8, "lambda_sparsity": 3e-4, "lr": 1e-3, "batch": 128,
                "max_epochs": 60, "patience": 5, "val_fraction": 0.1},
    },
    "oscillation": {"z_amp_min": 2.0, "eps_omega_rel": 0.10, "quad_tol": float(np.pi / 8),
                    "coherence_min": 0.6, "edge_guard": 5},
    "modes": {"r": 8},
    "steering": {"P": 6, "K_basis": 6},
    "objective": {
        "weights": {"lambda_vel": 1.0, "lambda_dv": 0.5, "lambda_phase": 1e-2, "lambda_mag": 1e-3},
        "optimizer": {"learning_rate": 1e-2, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8,
                      "max_iters": 500, "grad_tol": 1e-7},
    },
    "evaluation": {"static_k": 10, "static_kinds": ["SCALE", "ADDITIVE", "CLAMP"]},
    "sweep": {"P": [4, 5, 6, 7, 8], "lambda_mag": [1e-4, 1e-3, 5e-3]},
}


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key} must be a section")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


@dataclass
class RunConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))
    run_dir: Path = Path("run")

    def __post_init__(self):
        self.run_dir = Path(self.run_dir)
        self.validate()

    # sections as library objects

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def dataset_dir(self) -> Path:
        p = self.raw["paths"]["dataset_dir"]
        return Path(p) if p else self.run_dir / "dataset"

    @property
    def representation(self) -> str:
        return self.raw["representation"]["kind"]

    def model_dir(self, kind: str | None = None) -> Path:
        p = self.raw["paths"]["model_dir"]
        if p:
            return Path(p)
        return self.run_dir / "model" / (kind or self.representation).lower()

    def synth(self) -> SynthConfig:
        s = self.raw["synthgen"]
        return SynthConfig(
            N=int(s["N"]), H=int(s["H"]), d_emb=int(s["d_emb"]), n_pairs_true=int(s["n_pairs_true"]),
            n_distractors=int(s["n_distractors"]),
            frequencies=tuple(2 * np.pi / float(p) for p in s["periods"]),
            amplitudes=tuple(float(a) for a in s["amplitudes"]),
            noise_sigma=float(s["noise_sigma"]), seed=self.seed, mixing=str(s["mixing"]),
            L_target=int(s["L_target"]), t0=int(s["t0"]),
        )

    def sae(self) -> SaeTrainConfig:
        s = self.raw["representation"]["sae"]
        return SaeTrainConfig(kappa=int(s["kappa"]), lambda_sparsity=float(s["lambda_sparsity"]),
                              lr=float(s["lr"]), batch=int(s["batch"]), max_epochs=int(s["max_epochs"]),
                              patience=int(s["patience"]), seed=self.seed,
                              val_fraction=float(s["val_fraction"]))

    def pair_filter(self, P: int | None = None) -> PairFilterConfig:
        o = self.raw["oscillation"]
        return PairFilterConfig(float(o["z_amp_min"]), float(o["eps_omega_rel"]), float(o["quad_tol"]),
                                float(o["coherence_min"]), int(o["edge_guard"]),
                                int(P if P is not None else self.P))

    @property
    def P(self) -> int:
        return int(self.raw["steering"]["P"])

    @property
    def K_basis(self) -> int:
        return int(self.raw["steering"]["K_basis"])

    @property
    def r(self) -> int:
        return int(self.raw["modes"]["r"])

    def weights(self, lambda_mag: float | None = None) -> LossWeights:
        w = dict(self.raw["objective"]["weights"])
        if lambda_mag is not None:
            w["lambda_mag"] = lambda_mag
        return LossWeights(**{k: float(v) for k, v in w.items()})

    def optimizer(self) -> OptimizerConfig:
        o = self.raw["objective"]["optimizer"]
        return OptimizerConfig(learning_rate=float(o["learning_rate"]), beta1=float(o["beta1"]),
                               beta2=float(o["beta2"]), eps=float(o["eps"]),
                               max_iters=int(o["max_iters"]), grad_tol=float(o["grad_tol"]), seed=self.seed)

    def fingerprint(self) -> str:
        return fingerprint(self.raw)

    def validate(self) -> None:
        r = self.raw
        if r["representation"]["kind"] not in REPRESENTATIONS:
            raise ConfigError(f"representation.kind must be one of {REPRESENTATIONS}")
        try:
            self.synth()
            self.sae()
            self.pair_filter()
            self.weights()
            self.optimizer()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.P < 1 or self.r < 1 or self.K_basis < 0:
            raise ConfigError("need steering.P >= 1, modes.r >= 1, steering.K_basis >= 0")
        if self.optimizer().max_iters < 0:
            raise ConfigError("objective.optimizer.max_iters must be >= 0")
        if not 0 < self.raw["representation"]["sae"]["val_fraction"] < 1:
            raise ConfigError("representation.sae.val_fraction must lie in (0, 1)")
        if not 1 <= int(r["evaluation"]["static_k"]) <= 10:
            raise ConfigError("evaluation.static_k must lie in 1..10")
        for kind in r["evaluation"]["static_kinds"]:
            if kind not in ("SCALE", "ADDITIVE", "CLAMP"):
                raise ConfigError(f"unknown static kind {kind!r}")
        if not r["sweep"]["P"] or not r["sweep"]["lambda_mag"]:
            raise ConfigError("sweep grids must be non-empty")
        if min(r["sweep"]["P"]) < 1 or min(r["sweep"]["lambda_mag"]) < 0:
            raise ConfigError("sweep grid values out of range")
        D = r["representation"]["D_pca"]
        if D is not None and not 1 <= int(D) <= int(r["synthgen"]["d_emb"]):
            raise ConfigError("representation.D_pca out of range")


def load_config(path=None, run_dir=None, seed: int | None = None) -> RunConfig:
    """Defaults, overlaid by the YAML file, overlaid by command-line overrides."""
    raw = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path} must hold a mapping of sections")
        doc = dict(doc)
        file_run_dir = doc.pop("run_dir", None)
        raw = _merge(raw, doc)
        if run_dir is None and file_run_dir:
            run_dir = file_run_dir
    if seed is not None:
        raw["seed"] = int(seed)
    return RunConfig(raw, Path(run_dir) if run_dir else Path("run"))


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.raw, sort_keys=True))
