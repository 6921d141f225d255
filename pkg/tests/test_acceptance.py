"""Acceptance criteria, each at its stated tolerance and time budget.

Every test prints one PASS/FAIL line; the lines are repeated in the pytest
terminal summary.
"""

import filecmp
import time

import numpy as np
import pytest

from _instances import fd_check, random_objective
from conftest import record
from phasesteer.cli import EXIT_OK, main
from phasesteer.evaluation import corr, frac_pct, nrmse, optimize_static, select_static_features
from phasesteer.modes import decompose, decompose_field, reconstruct
from phasesteer.objective import OptimizerConfig, RotationObjective, StaticObjective, SteeringProblem, optimize
from phasesteer.oscillation import PairFilterConfig, analytic_signal, circular_mean, frequency_proxy, identify_pairs, wrap
from phasesteer.representation import (IdentityMap, LatentMap, SaeTrainConfig, SaeTrainLog, forward_array,
                                       inverse_array, pca_fit, sae_train)
from phasesteer.steering import CosineDictionary, SteeringParams, rotate_coefficients
from phasesteer.surrogate import decode_array
from phasesteer.synthgen import SynthConfig, generate, shifted_target

SEEDS = (0, 1, 2)


def _check(n, ok, detail):
    record(n, bool(ok), detail)
    assert ok, detail


# 1 rotation algebra

def test_c01_rotation_algebra():
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        T, r = rng.integers(2, 40), rng.integers(1, 9)
        ci, cj = rng.normal(size=(2, T, r)) * rng.uniform(0.1, 10)
        d1, d2 = rng.uniform(-4 * np.pi, 4 * np.pi, (2, T))
        zi, zj = rotate_coefficients(ci, cj, np.zeros(T))
        ai, aj = rotate_coefficients(ci, cj, d1)
        bi, bj = rotate_coefficients(ai, aj, d2)
        si, sj = rotate_coefficients(ci, cj, d1 + d2)
        ii, ij = rotate_coefficients(ai, aj, -d1)
        scale = max(1.0, np.abs(ci).max(), np.abs(cj).max()) ** 2
        worst = max(worst,
                    np.abs(zi - ci).max(), np.abs(zj - cj).max(),
                    np.abs(bi - si).max(), np.abs(bj - sj).max(),
                    np.abs(ii - ci).max(), np.abs(ij - cj).max(),
                    np.abs(ai**2 + aj**2 - ci**2 - cj**2).max() / scale)
    dt = time.perf_counter() - t0
    _check(1, worst <= 1e-12 and dt < 1.0, f"max deviation {worst:.2e} (tol 1e-12), {dt:.2f} s (< 1 s)")


# 2 Hilbert oracle

def test_c02_hilbert_oracle():
    t0 = time.perf_counter()
    t = np.arange(120)
    rng = np.random.default_rng(2)
    worst_w, worst_coh, worst_dphi = 0.0, 1.0, 0.0
    for period in range(10, 31):
        f = 1.0 / period
        psi = rng.uniform(0, 2 * np.pi)
        pc, _ = analytic_signal(np.cos(2 * np.pi * f * t + psi))
        ps, _ = analytic_signal(np.sin(2 * np.pi * f * t + psi))
        w_hat = frequency_proxy(pc, 5)
        res = circular_mean(pc, ps, 5)
        worst_w = max(worst_w, abs(w_hat - 2 * np.pi * f) / (2 * np.pi * f))
        worst_coh = min(worst_coh, abs(res))
        worst_dphi = max(worst_dphi, abs(wrap(np.angle(res) - np.pi / 2)))
    dt = time.perf_counter() - t0
    ok = worst_w <= 0.02 and worst_coh >= 0.95 and worst_dphi <= np.pi / 16 and dt < 1.0
    _check(2, ok, f"proxy rel err {worst_w:.2e} (<= 2%), coherence {worst_coh:.4f} (>= 0.95), "
                  f"phase diff err {worst_dphi:.2e} (<= pi/16), {dt:.2f} s")


# 3 SVD contract

def test_c03_svd_contract():
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    trunc, exact, path = 0.0, 0.0, 0.0
    for _ in range(20):
        T, N, r = 121, rng.integers(20, 200), rng.integers(1, 9)
        field = rng.normal(size=(T, N)) * np.linspace(2, 0.2, N)
        Z = field - field.mean(axis=0)
        s = np.linalg.svd(Z, compute_uv=False)
        md = decompose_field(field, r)
        err = np.sum((reconstruct(md) - field) ** 2)
        trunc = max(trunc, abs(err - np.sum(s[r:] ** 2)) / np.sum(s[r:] ** 2))
        k = rng.integers(1, 6)
        low = rng.normal(size=(T, k)) @ rng.normal(size=(k, N)) + rng.normal(size=N)
        md_low = decompose_field(low, k)
        exact = max(exact, np.abs(reconstruct(md_low) - low).max() / np.abs(low).max())
        g = decompose_field(field, r, method="gram")
        v = decompose_field(field, r, method="svd")
        path = max(path, np.abs(g.phi - v.phi).max(), np.abs(g.coeffs - v.coeffs).max() / s[0],
                   np.abs(g.singular_values - v.singular_values).max() / s[0])
    dt = time.perf_counter() - t0
    ok = trunc <= 1e-8 and exact <= 1e-10 and path <= 1e-9 and dt < 5.0
    _check(3, ok, f"truncation {trunc:.1e} (1e-8), true rank {exact:.1e} (1e-10), gram vs svd {path:.1e} (1e-9), "
                  f"{dt:.2f} s")


# 4 gradient check

def test_c04_gradient_check():
    t0 = time.perf_counter()
    obj, rng = random_objective(seed=4, P=3, K=6, T=40, N=12, D=10, d_emb=8, r=5)
    assert len(obj.problem.decoder.layers) == 2 and obj.problem.decoder.layers[0].activation == "RELU"
    theta = 0.3 * rng.normal(size=obj.P * (obj.K + 2))
    theta[0::obj.K + 2] *= 0.05
    worst, g = fd_check(obj, theta, step=1e-5)
    dt = time.perf_counter() - t0
    _check(4, worst <= 1.0 and dt < 30.0,
           f"{len(g)} parameters, worst error / allowed {worst:.3f} (<= 1; rel 1e-4, abs 1e-8), {dt:.2f} s")


# 5 oracle shift recovery

def test_c05_oracle_shift_recovery():
    t0 = time.perf_counter()
    ds = generate(SynthConfig())
    L = ds.config.L_target
    gmap = LatentMap(ds.mixing)
    X = forward_array(gmap, ds.embeddings.values)
    target = shifted_target(ds, L).values
    pairs = identify_pairs(X, gmap, PairFilterConfig())
    decomps = {f: decompose(X, f, 8) for p in pairs for f in (p.i, p.j)}
    obj = RotationObjective(SteeringProblem(X, gmap, ds.decoder, target), pairs, decomps,
                            CosineDictionary.build(ds.config.H, 6))
    params, _ = optimize(SteeringParams.zeros(len(pairs), 6), obj, OptimizerConfig())
    U_orig = decode_array(ds.decoder, inverse_array(gmap, X))
    frac = frac_pct(obj.steered_velocity(params)[..., 0], U_orig[..., 0], target[..., 0])
    omega = {i: w for i, _, w in ds.true_pairs}
    b_err = max(abs(wrap(b - omega[p.i] * L)) for p, b in zip(pairs, params.b))
    dt = time.perf_counter() - t0
    planted = sorted((p.i, p.j) for p in pairs) == [(i, j) for i, j, _ in ds.true_pairs]
    ok = planted and frac >= 90 and b_err <= 0.05 and dt <= 60
    _check(5, ok, f"pairs {[(p.i, p.j) for p in pairs]}, frac% {frac:.2f} (>= 90), max |b - w L| {b_err:.4f} rad "
                  f"(<= 0.05), max |a| {np.abs(params.a).max():.1e}, {dt:.1f} s (<= 60 s)")


# 6, 7 representation ordering and static baselines, shared setup

def _steer_frac(X, gmap, ds, target):
    pairs = identify_pairs(X, gmap, PairFilterConfig(top_P=6))
    if not pairs:
        return 0.0
    decomps = {f: decompose(X, f, 8) for p in pairs for f in (p.i, p.j)}
    obj = RotationObjective(SteeringProblem(X, gmap, ds.decoder, target), pairs, decomps,
                            CosineDictionary.build(ds.config.H, 6))
    params, _ = optimize(SteeringParams.zeros(len(pairs), 6), obj, OptimizerConfig())
    U_orig = decode_array(ds.decoder, inverse_array(gmap, X))
    return frac_pct(obj.steered_velocity(params)[..., 0], U_orig[..., 0], target[..., 0])


@pytest.fixture(scope="module")
def noisy_runs():
    out = {"rep_time": 0.0, "static_time": 0.0, "seeds": {}}
    for seed in SEEDS:
        t0 = time.perf_counter()
        ds = generate(SynthConfig(noise_sigma=0.05, mixing="RANDOM_DENSE", seed=seed))
        h = ds.embeddings.values
        samples = h.reshape(-1, h.shape[2])
        target = shifted_target(ds, ds.config.L_target).values
        sae = sae_train(samples, SaeTrainConfig(seed=seed))
        pca = pca_fit(samples, samples.shape[1])
        X_sae = forward_array(sae, h)
        row = {"SAE": _steer_frac(X_sae, sae, ds, target),
               "PCA": _steer_frac(forward_array(pca, h), pca, ds, target),
               "RAW": _steer_frac(h, IdentityMap(h.shape[2]), ds, target)}
        out["rep_time"] += time.perf_counter() - t0
        t0 = time.perf_counter()
        problem = SteeringProblem(X_sae, sae, ds.decoder, target)
        problem.weights.lambda_phase = 0.0
        feats = select_static_features(X_sae, sae, 10)
        U_orig = decode_array(ds.decoder, inverse_array(sae, X_sae))
        for kind in ("SCALE", "ADDITIVE", "CLAMP"):
            iv, _ = optimize_static(kind, problem, feats, OptimizerConfig())
            U = StaticObjective(problem, kind, feats).steered_velocity(np.array(iv.values))
            row[kind] = frac_pct(U[..., 0], U_orig[..., 0], target[..., 0])
        out["static_time"] += time.perf_counter() - t0
        out["seeds"][seed] = row
        print(f"seed {seed}: " + ", ".join(f"{k} {v:.2f}" for k, v in row.items()))
    out["mean"] = {k: float(np.mean([r[k] for r in out["seeds"].values()])) for k in out["seeds"][SEEDS[0]]}
    return out


def test_c06_representation_ordering(noisy_runs):
    m = noisy_runs["mean"]
    per_seed = "; ".join(f"s{s} " + "/".join(f"{r[k]:.1f}" for k in ("SAE", "PCA", "RAW"))
                         for s, r in noisy_runs["seeds"].items())
    ok = m["SAE"] - m["PCA"] >= 3 and m["PCA"] - m["RAW"] >= 3 and noisy_runs["rep_time"] <= 600
    _check(6, ok, f"mean frac% SAE {m['SAE']:.2f} > PCA {m['PCA']:.2f} > raw {m['RAW']:.2f} (gaps >= 3) "
                  f"[{per_seed}], {noisy_runs['rep_time']:.0f} s (<= 600 s)")


def test_c07_static_baselines(noisy_runs):
    m = noisy_runs["mean"]
    best_static = max(m["SCALE"], m["ADDITIVE"], m["CLAMP"])
    ok = (m["CLAMP"] < 0 and abs(m["ADDITIVE"]) <= 5 and m["SAE"] - best_static >= 20
          and noisy_runs["static_time"] <= 300)
    _check(7, ok, f"mean frac% rotation {m['SAE']:.2f}, scale {m['SCALE']:.2f}, additive {m['ADDITIVE']:.2f}, "
                  f"clamp {m['CLAMP']:.2f} (clamp < 0, |additive| <= 5, margin >= 20), "
                  f"{noisy_runs['static_time']:.0f} s (<= 300 s)")


# 8 metric unit suite

def test_c08_metric_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    s, o, t = rng.normal(size=(3, 20, 30))
    uv = rng.normal(size=(20, 30, 2))
    checks = {
        "frac(target)=100": abs(frac_pct(t, o, t) - 100) <= 1e-12,
        "frac(orig)=0": abs(frac_pct(o, o, t)) <= 1e-12,
        "nrmse(target)=0": nrmse(t, t) <= 1e-12,
        "corr(x,x)=1": abs(corr(uv, uv) - 1) <= 1e-12,
        "corr(x,-x)=-1": abs(corr(uv, -uv) + 1) <= 1e-12,
        "roi(full)=frac": frac_pct(s, o, t, np.ones(30, bool)) == frac_pct(s, o, t),
    }
    dt = time.perf_counter() - t0
    bad = [k for k, v in checks.items() if not v]
    _check(8, not bad and dt < 1.0, f"{len(checks) - len(bad)}/{len(checks)} identities hold"
                                    f"{' (failed: ' + ', '.join(bad) + ')' if bad else ''}, {dt:.3f} s")


# 9 SAE training

def test_c09_sae_training():
    t0 = time.perf_counter()
    ds = generate(SynthConfig())
    samples = ds.embeddings.values.reshape(-1, ds.config.d_emb)
    log = SaeTrainLog()
    sae_train(samples, SaeTrainConfig(), log)
    dt = time.perf_counter() - t0
    ok = log.val_relative_error <= 0.05 and log.val_zero_fraction >= 0.60 and log.max_row_norm_error <= 1e-9 \
        and dt <= 180
    _check(9, ok, f"validation rel err {log.val_relative_error:.4f} (<= 0.05), zero fraction "
                  f"{log.val_zero_fraction:.3f} (>= 0.60), max row-norm deviation {log.max_row_norm_error:.1e} "
                  f"over {log.steps} steps (<= 1e-9), {dt:.0f} s (<= 180 s)")


# 10 sweep harness, 11 determinism

def _cli(run_dir, *commands):
    for c in commands:
        code = main([c, "--run-dir", str(run_dir), "--quiet"])
        assert code == EXIT_OK, f"{c} exited {code}"


@pytest.mark.slow
def test_c10_sweep(tmp_path):
    _cli(tmp_path / "run", "generate", "train-sae")
    t0 = time.perf_counter()
    _cli(tmp_path / "run", "sweep")
    dt = time.perf_counter() - t0
    sweep = tmp_path / "run" / "sweep"
    first = (sweep / "pareto.csv").read_bytes()
    rows = first.decode().strip().splitlines()
    subdirs = sorted(p.name for p in sweep.iterdir() if p.is_dir())
    _cli(tmp_path / "run", "sweep")
    same = (sweep / "pareto.csv").read_bytes() == first
    ok = len(rows) == 16 and len(subdirs) == 15 and same and dt <= 900
    _check(10, ok, f"{len(rows) - 1} configurations, {len(subdirs)} run dirs, rerun byte-identical: {same}, "
                   f"{dt:.0f} s per sweep (<= 900 s)")


REPORTS = ["pairs/pairs.json", "pairs/pairs.csv", "steer/params.json", "steer/loss_history.csv",
           "steer/result.json", "steer/phase_trajectories.csv", "evaluate/metrics.json", "evaluate/metrics.txt",
           "evaluate/per_node_frac_rotation.csv", "model/sae/summary.json", "model/sae/training_log.csv"]


@pytest.mark.slow
def test_c11_determinism(tmp_path):
    t0 = time.perf_counter()
    for name in ("a", "b"):
        _cli(tmp_path / name, "generate", "train-sae", "identify-pairs", "steer", "evaluate")
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", REPORTS, shallow=False)
    dt = time.perf_counter() - t0
    ok = len(match) == len(REPORTS)
    _check(11, ok, f"{len(match)}/{len(REPORTS)} report files byte-identical across two runs"
                   f"{' (differ: ' + ', '.join(mismatch + errors) + ')' if not ok else ''}, {dt:.0f} s")
