"""Composite steering loss, hand-derived adjoints and the Adam loop.

The forward path is phase offsets -> coefficient rotation -> mode
reconstruction -> affine inverse map -> frozen decoder -> losses. Every
inverse map is affine, so a change dX in feature f moves the embeddings by
dX * row_f, and only the paired features need to be touched.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .representation import inverse_array
from .steering import CosineDictionary, SteeringParams, pair_indices, phase_trajectories, rotate_coefficients
from .surrogate import decode_with_adjoint

log = logging.getLogger(__name__)


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class LossWeights:
    lambda_vel: float = 1.0
    lambda_dv: float = 0.5
    lambda_phase: float = 1e-2
    lambda_mag: float = 1e-3

    def __post_init__(self):
        if min(self.lambda_vel, self.lambda_dv, self.lambda_phase, self.lambda_mag) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lambda_vel <= 0 and self.lambda_dv <= 0:
            raise ValueError("at least one of lambda_vel, lambda_dv must be positive")


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    vel: float
    dv: float
    curv: float
    mag: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OptimizerConfig:
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_iters: int = 500
    grad_tol: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def loss_vel(U_steer, U_target) -> float:
    a, b = _pair(U_steer, U_target)
    r = a - b
    return float(np.sum(r * r) / (a.shape[0] * a.shape[1]))


def loss_dv(U_steer, U_target) -> float:
    a, b = _pair(U_steer, U_target)
    if a.shape[0] < 2:
        raise ValueError("need at least two frames")
    d = np.diff(a - b, axis=0)
    return float(np.sum(d * d) / (d.shape[0] * a.shape[1]))


def loss_curv(phase_trajectories) -> float:
    phi = np.atleast_2d(np.asarray(phase_trajectories, dtype=np.float64))
    if phi.shape[1] < 3:
        raise ValueError("curvature needs at least three frames")
    d2 = phi[:, :-2] - 2 * phi[:, 1:-1] + phi[:, 2:]
    return float(np.sum(d2 * d2) / d2.size)


def loss_mag(X_prime, X, gmap) -> float:
    a, b = _pair(X_prime, X)
    diff = inverse_array(gmap, a) - inverse_array(gmap, b)
    return float(np.sum(diff * diff) / diff.size)


def _pair(a, b):
    a = np.asarray(getattr(a, "values", a), dtype=np.float64)
    b = np.asarray(getattr(b, "values", b), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def _check_finite(name: str, value) -> None:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite value in {name}")


@dataclass
class SteeringProblem:
    """Everything fixed during optimization: activations, maps, decoder, target, weights."""

    X: np.ndarray  # [T, N, D]
    gmap: object
    decoder: object
    target: np.ndarray  # [T, N, d]
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        self.X = np.asarray(getattr(self.X, "values", self.X), dtype=np.float64)
        self.target = np.asarray(getattr(self.target, "values", self.target), dtype=np.float64)
        self.h_base = inverse_array(self.gmap, self.X)
        self.rows = np.asarray(self.gmap.decoder_rows, dtype=np.float64)
        T, N, _ = self.X.shape
        if self.target.shape[:2] != (T, N):
            raise ValueError("target must share (frames, nodes) with the activations")

    @property
    def shape(self):
        return self.X.shape

    def evaluate_delta(self, feats, delta: np.ndarray, curv: float = 0.0, grad: bool = True):
        """Losses for X with delta added to feature slices `feats`; returns
        (breakdown, U_steer, d total / d delta or None).
        """
        T, N, _ = self.X.shape
        lw = self.weights
        rows = self.rows[list(feats)]
        k = rows.shape[0]
        dh = (delta.reshape(T * N, k) @ rows).reshape(T, N, -1)
        h = self.h_base + dh
        U, back = decode_with_adjoint(self.decoder, h.reshape(T * N, -1))
        U = U.reshape(T, N, -1)
        _check_finite("decoded velocities", U)
        r = U - self.target
        dr = np.diff(r, axis=0)
        vel = float(np.sum(r * r) / (T * N))
        dv = float(np.sum(dr * dr) / ((T - 1) * N))
        mag = float(np.sum(dh * dh) / dh.size)
        total = lw.lambda_vel * vel + lw.lambda_dv * dv + lw.lambda_phase * curv + lw.lambda_mag * mag
        _check_finite("total loss", total)
        out = LossBreakdown(total, vel, dv, curv, mag)
        if not grad:
            return out, U, None
        gU = (2.0 * lw.lambda_vel / (T * N)) * r
        g_dr = (2.0 * lw.lambda_dv / ((T - 1) * N)) * dr
        gU[1:] += g_dr
        gU[:-1] -= g_dr
        gh = back(gU.reshape(T * N, -1))
        gh += (2.0 * lw.lambda_mag / dh.size) * dh.reshape(T * N, -1)
        return out, U, (gh @ rows.T).reshape(T, N, k)


@dataclass
class RotationObjective:
    problem: SteeringProblem
    pairs: list  # [(i, j)]
    decomps: dict  # feature -> ModeDecomposition
    dictionary: CosineDictionary

    def __post_init__(self):
        self.pairs = [pair_indices(p) for p in self.pairs]
        self.feats = [f for pair in self.pairs for f in pair]
        if len(set(self.feats)) != len(self.feats):
            raise ValueError("a feature may belong to at most one steered pair")
        for f in self.feats:
            if f not in self.decomps:
                raise KeyError(f"no mode decomposition for feature {f}")
        T = self.problem.X.shape[0]
        if self.dictionary.horizon + 1 != T:
            raise ValueError("cosine dictionary horizon does not match activations")
        self.t = np.arange(T, dtype=np.float64)
        self.slices = np.stack([self.problem.X[:, :, f] for f in self.feats])  # [2P, T, N]
        # second differences annihilate a_k t + b_k, so curvature depends on w alone
        B = self.dictionary.B
        self.B2 = B[:-2] - 2 * B[1:-1] + B[2:]

    @property
    def P(self) -> int:
        return len(self.pairs)

    @property
    def K(self) -> int:
        return self.dictionary.K_basis

    def _delta(self, phases):
        recon = np.empty_like(self.slices)
        for k, (i, j) in enumerate(self.pairs):
            mi, mj = self.decomps[i], self.decomps[j]
            ci, cj = rotate_coefficients(mi.coeffs, mj.coeffs, phases[k])
            recon[2 * k] = ci @ mi.phi.T + mi.mu
            recon[2 * k + 1] = cj @ mj.phi.T + mj.mu
        return np.moveaxis(recon - self.slices, 0, -1)

    def _curv(self, params: SteeringParams):
        d2 = params.w @ self.B2.T
        return float(np.sum(d2 * d2) / max(d2.size, 1)), d2

    def loss(self, params: SteeringParams) -> LossBreakdown:
        phases = phase_trajectories(params, self.dictionary)
        curv, _ = self._curv(params)
        out, _, _ = self.problem.evaluate_delta(self.feats, self._delta(phases), curv, grad=False)
        return out

    def steered_velocity(self, params: SteeringParams) -> np.ndarray:
        phases = phase_trajectories(params, self.dictionary)
        _, U, _ = self.problem.evaluate_delta(self.feats, self._delta(phases), grad=False)
        return U

    def loss_and_grad(self, theta: np.ndarray):
        params = SteeringParams.unflatten(theta, self.P, self.K)
        phases = phase_trajectories(params, self.dictionary)
        _check_finite("phase trajectories", phases)
        curv, d2 = self._curv(params)
        out, _, g_delta = self.problem.evaluate_delta(self.feats, self._delta(phases), curv)
        g_phase = np.zeros_like(phases)
        g_delta = np.ascontiguousarray(np.moveaxis(g_delta, -1, 0))
        for k, (i, j) in enumerate(self.pairs):
            mi, mj = self.decomps[i], self.decomps[j]
            g_ci = g_delta[2 * k] @ mi.phi
            g_cj = g_delta[2 * k + 1] @ mj.phi
            c = np.cos(phases[k])[:, None]
            s = np.sin(phases[k])[:, None]
            g_phase[k] = np.sum(g_ci * (-s * mi.coeffs - c * mj.coeffs)
                                + g_cj * (c * mi.coeffs - s * mj.coeffs), axis=1)
        ga = g_phase @ self.t
        gb = g_phase.sum(axis=1)
        gw = g_phase @ self.dictionary.B
        if d2.size:
            gw += (2.0 * self.problem.weights.lambda_phase / d2.size) * d2 @ self.B2
        grad = np.column_stack([ga, gb, gw]).ravel()
        _check_finite("gradient", grad)
        return out, grad


STATIC_KINDS = ("SCALE", "ADDITIVE", "CLAMP")


@dataclass
class StaticObjective:
    problem: SteeringProblem
    kind: str
    features: list

    def __post_init__(self):
        if self.kind not in STATIC_KINDS:
            raise ValueError(f"unknown static intervention {self.kind!r}")
        self.features = [int(f) for f in self.features]
        if len(set(self.features)) != len(self.features):
            raise ValueError("static features must be distinct")
        D = self.problem.X.shape[2]
        if any(not 0 <= f < D for f in self.features):
            raise IndexError("static feature index out of range")
        self.slices = self.problem.X[:, :, self.features]

    def initial(self) -> np.ndarray:
        if self.kind == "SCALE":
            return np.ones(len(self.features))
        if self.kind == "ADDITIVE":
            return np.zeros(len(self.features))
        return self.slices.mean(axis=(0, 1))

    def _delta(self, values):
        if self.kind == "SCALE":
            return (values - 1.0) * self.slices
        if self.kind == "ADDITIVE":
            return np.broadcast_to(values, self.slices.shape).copy()
        return values - self.slices

    def loss(self, values) -> LossBreakdown:
        return self.problem.evaluate_delta(self.features, self._delta(np.asarray(values)), grad=False)[0]

    def steered_velocity(self, values) -> np.ndarray:
        return self.problem.evaluate_delta(self.features, self._delta(np.asarray(values)), grad=False)[1]

    def loss_and_grad(self, values):
        values = np.asarray(values, dtype=np.float64)
        out, _, g = self.problem.evaluate_delta(self.features, self._delta(values))
        if self.kind == "SCALE":
            grad = np.sum(g * self.slices, axis=(0, 1))
        else:
            grad = np.sum(g, axis=(0, 1))
        return out, grad


@dataclass
class OptimizeResult:
    theta: np.ndarray
    history: list  # LossBreakdown per iteration (loss at the iterate before its update)
    best_iteration: int
    converged: bool
    diverged: bool = False
    message: str = ""

    @property
    def best(self) -> LossBreakdown:
        return self.history[self.best_iteration]


def adam_minimize(loss_and_grad, theta0, cfg: OptimizerConfig | None = None) -> OptimizeResult:
    """Full-batch Adam; returns the best iterate seen.

    Stops after max_iters updates or once the gradient infinity-norm drops
    below grad_tol. A non-finite loss or gradient aborts the loop and the
    best-so-far iterate is returned with a diagnostic.
    """
    cfg = cfg or OptimizerConfig()
    theta = np.array(theta0, dtype=np.float64, copy=True)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    history: list[LossBreakdown] = []
    best_theta, best_total, best_it = theta.copy(), np.inf, 0
    for it in range(cfg.max_iters + 1):
        try:
            out, grad = loss_and_grad(theta)
        except (NonFiniteError, FloatingPointError) as exc:
            log.warning("optimizer aborted at iteration %d: %s", it, exc)
            if not history:
                raise
            return OptimizeResult(best_theta, history, best_it, False, True, str(exc))
        history.append(out)
        if out.total < best_total:
            best_total, best_theta, best_it = out.total, theta.copy(), it
        if np.max(np.abs(grad), initial=0.0) < cfg.grad_tol:
            return OptimizeResult(best_theta, history, best_it, True)
        if it == cfg.max_iters:
            break
        step = it + 1
        m = cfg.beta1 * m + (1 - cfg.beta1) * grad
        v = cfg.beta2 * v + (1 - cfg.beta2) * grad * grad
        m_hat = m / (1 - cfg.beta1**step)
        v_hat = v / (1 - cfg.beta2**step)
        theta = theta - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return OptimizeResult(best_theta, history, best_it, False)


def optimize(initial: SteeringParams, objective: RotationObjective, cfg: OptimizerConfig | None = None,
             weights: LossWeights | None = None):
    """Optimize steering parameters; returns (best params, per-iteration LossBreakdown history)."""
    if weights is not None:
        objective.problem.weights = weights
    res = adam_minimize(objective.loss_and_grad, initial.flatten(), cfg)
    params = SteeringParams.unflatten(res.theta, objective.P, objective.K)
    return params, res
