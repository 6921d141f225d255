"""Command-line front end.

    phasesteer generate | train-sae | fit-pca | identify-pairs | steer |
               baseline | evaluate | sweep | report
               [--config FILE] [--run-dir DIR] [--seed N] [--quiet]

Run directory layout (each subcommand writes only its own slot)::

    dataset/                 generate
    model/sae/, model/pca/   train-sae, fit-pca
    pairs/                   identify-pairs
    steer/                   steer (params, loss history, velocities, mode cache)
    baseline/<kind>/         baseline
    evaluate/                evaluate
    sweep/P<P>_lmag<l>/      sweep, plus sweep/pareto.csv
    report/                  report (CSV series and PNG figures)

Every slot gets a manifest.json with the config fingerprint, package
version, a timestamp and hashes of the files it read. Reports themselves
carry no timestamps, so identical inputs give byte-identical reports.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, dump_config, load_config
from .datamodel import FormatError, read_tensor, roi_mask, write_tensor
from .evaluation import (DegenerateTargetError, apply_static, evaluate,
                         optimize_static, select_static_features)
from .modes import decompose, save_decompositions
from .objective import NonFiniteError, RotationObjective, SteeringProblem, optimize
from .oscillation import OscillatoryPair, identify_pairs
from .representation import (IdentityMap, SaeTrainLog, TrainingDiverged, forward_array, inverse_array,
                             load_map, pca_fit, reconstruction_error, sae_train, save_map, zero_fraction)
from .steering import CosineDictionary, SteeringParams, phase_trajectories
from .surrogate import decode_array
from .synthgen import generate, load_dataset, save_dataset

log = logging.getLogger("phasesteer")

COMMANDS = ("generate", "train-sae", "fit-pca", "identify-pairs", "steer", "baseline",
            "evaluate", "sweep", "report")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_INPUT = 0, 2, 3, 4, 5


class DegenerateInputError(ValueError):
    """Inputs on which the requested computation is undefined."""


# small I/O helpers

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path):
    if not path.exists():
        raise FileNotFoundError(f"missing artifact {path}")
    return json.loads(path.read_text())


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing artifact {path} (run `phasesteer {hint}` first)")
    return path


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


def _manifest(slot: Path, cfg: RunConfig, command: str, inputs=()) -> None:
    files = {}
    for p in inputs:
        p = Path(p)
        if p.is_file():
            files[str(p)] = _sha256(p)
    _write_json(slot / "manifest.json", {
        "command": command,
        "config_fingerprint": cfg.fingerprint(),
        "version": __version__,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "inputs": files,
    })


# shared loading

def _dataset(cfg: RunConfig):
    d = cfg.dataset_dir
    _require(d / "embeddings.pst", "generate")
    return load_dataset(d)


def _gmap(cfg: RunConfig, d_emb: int, kind: str | None = None):
    kind = kind or cfg.representation
    if kind == "IDENTITY":
        return IdentityMap(d_emb)
    hint = "train-sae" if kind == "SAE" else "fit-pca"
    gmap = load_map(_require(cfg.model_dir(kind), hint))
    if gmap.d_emb != d_emb:
        raise DegenerateInputError(f"model expects d_emb={gmap.d_emb}, dataset has {d_emb}")
    return gmap


def _representation(cfg: RunConfig):
    ds = _dataset(cfg)
    gmap = _gmap(cfg, ds.embeddings.d_emb)
    return ds, gmap, forward_array(gmap, ds.embeddings.values)


def _load_pairs(cfg: RunConfig) -> list[OscillatoryPair]:
    doc = _read_json(_require(cfg.run_dir / "pairs" / "pairs.json", "identify-pairs"))
    if doc.get("representation") != cfg.representation:
        raise ConfigError(f"pair manifest was built for {doc.get('representation')}, "
                          f"config asks for {cfg.representation}")
    pairs = [OscillatoryPair(**p) for p in doc["pairs"]]
    if not pairs:
        raise DegenerateInputError("pair manifest is empty")
    return pairs


def _check_target(ds) -> np.ndarray:
    target = ds.target.values
    if target.shape[:2] != ds.embeddings.values.shape[:2]:
        raise DegenerateInputError(f"target shape {target.shape} does not match the horizon")
    orig = decode_array(ds.decoder, ds.embeddings.values)
    gap = np.mean((orig - target) ** 2)
    if not gap > 1e-24 * max(np.mean(target ** 2), 1e-300):
        raise DegenerateTargetError("target equals the unsteered prediction (L_target = 0?); frac% is undefined")
    return target


def _history_rows(history):
    return [(k, b.total, b.vel, b.dv, b.curv, b.mag) for k, b in enumerate(history)]


HISTORY_HEADER = ("iteration", "total", "vel", "dv", "curv", "mag")


def _result_doc(res) -> dict:
    return {"best_iteration": res.best_iteration, "iterations": len(res.history) - 1,
            "converged": bool(res.converged), "diverged": bool(res.diverged), "message": res.message,
            "best_loss": res.best.to_dict(), "initial_loss": res.history[0].to_dict()}


def _steer_once(cfg, ds, gmap, X, pairs, weights, out: Path, cache_modes: bool = True):
    """Optimize rotation parameters for the given pairs and write them to `out`."""
    target = _check_target(ds)
    decomps = {}
    for p in pairs:
        for f in (p.i, p.j):
            if f not in decomps:
                decomps[f] = decompose(X, f, cfg.r)
    dictionary = CosineDictionary.build(ds.embeddings.horizon, cfg.K_basis)
    problem = SteeringProblem(X, gmap, ds.decoder, target, weights)
    obj = RotationObjective(problem, pairs, decomps, dictionary)
    params, res = optimize(SteeringParams.zeros(len(pairs), cfg.K_basis), obj, cfg.optimizer())
    out.mkdir(parents=True, exist_ok=True)
    params.save(out / "params.json")
    _write_csv(out / "loss_history.csv", HISTORY_HEADER, _history_rows(res.history))
    _write_json(out / "result.json", _result_doc(res))
    write_tensor(out / "U_steer.pst", obj.steered_velocity(params))
    write_tensor(out / "U_orig.pst", decode_array(ds.decoder, problem.h_base))
    phases = phase_trajectories(params, dictionary)
    _write_csv(out / "phase_trajectories.csv", ["t"] + [f"pair{k}" for k in range(len(pairs))],
               [[t] + list(phases[:, t]) for t in range(phases.shape[1])])
    if cache_modes:
        save_decompositions(decomps, out / "modes")
    return params, res


def _metrics(ds, U_steer, U_orig, fp: str):
    return evaluate(U_steer, U_orig, ds.target.values, roi_mask(ds.geometry), fp)


# subcommands

def cmd_generate(cfg: RunConfig) -> None:
    ds = generate(cfg.synth())
    save_dataset(ds, cfg.dataset_dir)
    _manifest(cfg.dataset_dir, cfg, "generate")
    log.info("dataset written to %s (%d frames, %d nodes, d_emb=%d)", cfg.dataset_dir,
             ds.config.H + 1, ds.config.N, ds.config.d_emb)


def cmd_train_sae(cfg: RunConfig) -> None:
    ds = _dataset(cfg)
    samples = ds.embeddings.values.reshape(-1, ds.embeddings.d_emb)
    log_out = SaeTrainLog()
    model = sae_train(samples, cfg.sae(), log_out)
    out = cfg.model_dir("SAE")
    save_map(model, out)
    _write_csv(out / "training_log.csv", ("epoch", "train_loss", "val_loss"),
               [(k, a, b) for k, (a, b) in enumerate(zip(log_out.train_loss, log_out.val_loss))])
    _write_json(out / "summary.json", {
        "best_epoch": log_out.best_epoch, "steps": log_out.steps,
        "max_row_norm_error": log_out.max_row_norm_error,
        "relative_error": reconstruction_error(model, samples),
        "zero_fraction": zero_fraction(model, samples),
        "val_relative_error": log_out.val_relative_error,
        "val_zero_fraction": log_out.val_zero_fraction,
    })
    _manifest(out, cfg, "train-sae", [cfg.dataset_dir / "embeddings.pst"])
    log.info("SAE (width %d) written to %s, best epoch %d", model.width, out, log_out.best_epoch)


def cmd_fit_pca(cfg: RunConfig) -> None:
    ds = _dataset(cfg)
    samples = ds.embeddings.values.reshape(-1, ds.embeddings.d_emb)
    D = cfg.raw["representation"]["D_pca"] or ds.embeddings.d_emb
    model = pca_fit(samples, int(D))
    out = cfg.model_dir("PCA")
    save_map(model, out)
    _manifest(out, cfg, "fit-pca", [cfg.dataset_dir / "embeddings.pst"])
    log.info("PCA (%d components) written to %s", model.width, out)


def cmd_identify_pairs(cfg: RunConfig) -> None:
    ds, gmap, X = _representation(cfg)
    pairs = identify_pairs(X, gmap, cfg.pair_filter())
    out = cfg.run_dir / "pairs"
    _write_json(out / "pairs.json", {"representation": cfg.representation, "top_P": cfg.P,
                                     "pairs": [p.to_dict() for p in pairs]})
    _write_csv(out / "pairs.csv", ("i", "j", "omega", "coherence", "mean_phase_diff", "amplitude_score",
                                   "decoder_score", "footprint_score", "rank_score"),
               [(p.i, p.j, p.omega, p.coherence, p.mean_phase_diff, p.amplitude_score, p.decoder_score,
                 p.footprint_score, p.rank_score) for p in pairs])
    _manifest(out, cfg, "identify-pairs", [cfg.dataset_dir / "embeddings.pst"])
    if not pairs:
        raise DegenerateInputError("no feature pair passed the oscillation filters")
    log.info("%d pairs: %s", len(pairs), ", ".join(f"({p.i},{p.j})" for p in pairs))


def cmd_steer(cfg: RunConfig) -> None:
    pairs = _load_pairs(cfg)
    ds, gmap, X = _representation(cfg)
    out = cfg.run_dir / "steer"
    params, res = _steer_once(cfg, ds, gmap, X, pairs, cfg.weights(), out)
    _manifest(out, cfg, "steer", [cfg.dataset_dir / "embeddings.pst", cfg.dataset_dir / "target.pst",
                                  cfg.run_dir / "pairs" / "pairs.json"])
    log.info("steer: loss %.6g -> %.6g (best iteration %d)", res.history[0].total, res.best.total,
             res.best_iteration)


def cmd_baseline(cfg: RunConfig) -> None:
    ds, gmap, X = _representation(cfg)
    target = _check_target(ds)
    k = int(cfg.raw["evaluation"]["static_k"])
    features = select_static_features(X, gmap, k)
    weights = cfg.weights()
    weights.lambda_phase = 0.0
    problem = SteeringProblem(X, gmap, ds.decoder, target, weights)
    root = cfg.run_dir / "baseline"
    root.mkdir(parents=True, exist_ok=True)
    write_tensor(root / "U_orig.pst", decode_array(ds.decoder, problem.h_base))
    for kind in cfg.raw["evaluation"]["static_kinds"]:
        iv, res = optimize_static(kind, problem, features, cfg.optimizer())
        out = root / kind.lower()
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "params.json", iv.to_dict())
        _write_csv(out / "loss_history.csv", HISTORY_HEADER, _history_rows(res.history))
        _write_json(out / "result.json", _result_doc(res))
        X_static = apply_static(X, iv)
        write_tensor(out / "U_steer.pst", decode_array(ds.decoder, inverse_array(gmap, X_static)))
        log.info("baseline %s: loss %.6g -> %.6g", kind, res.history[0].total, res.best.total)
    _manifest(root, cfg, "baseline", [cfg.dataset_dir / "embeddings.pst", cfg.dataset_dir / "target.pst"])


def _methods(cfg: RunConfig) -> dict:
    """Available steered outputs: name -> (U_steer path, U_orig path)."""
    found = {}
    steer = cfg.run_dir / "steer"
    if (steer / "U_steer.pst").exists():
        found["rotation"] = (steer / "U_steer.pst", steer / "U_orig.pst")
    base = cfg.run_dir / "baseline"
    for kind in ("SCALE", "ADDITIVE", "CLAMP"):
        p = base / kind.lower() / "U_steer.pst"
        if p.exists():
            found[kind.lower()] = (p, base / "U_orig.pst")
    return found


def cmd_evaluate(cfg: RunConfig) -> None:
    ds = _dataset(cfg)
    methods = _methods(cfg)
    if not methods:
        raise FileNotFoundError(f"missing artifact {cfg.run_dir / 'steer' / 'U_steer.pst'} "
                                "(run `phasesteer steer` or `phasesteer baseline` first)")
    out = cfg.run_dir / "evaluate"
    fp = cfg.fingerprint()
    reports, lines = {}, [f"config {fp}", f"representation {cfg.representation}", ""]
    lines.append(f"{'method':<10} {'frac%':>10} {'ROI%':>10} {'nRMSE':>10} {'Corr':>10}")
    pos = ds.geometry.positions
    for name, (p_steer, p_orig) in methods.items():
        rep = _metrics(ds, read_tensor(p_steer), read_tensor(_require(p_orig, "steer")), fp)
        reports[name] = rep.to_dict()
        lines.append(f"{name:<10} {rep.frac_pct_vx:>10.4f} {rep.roi_pct_vx:>10.4f} "
                     f"{rep.nrmse_vx:>10.6f} {rep.corr_vxvy:>10.6f}")
        _write_csv(out / f"per_node_frac_{name}.csv", ("node", "x", "y", "frac"),
                   [(n, pos[n, 0], pos[n, 1], rep.per_node_frac[n]) for n in range(len(pos))])
    _write_json(out / "metrics.json", reports)
    (out / "metrics.txt").write_text("\n".join(lines) + "\n")
    _manifest(out, cfg, "evaluate", [p for pair in methods.values() for p in pair])
    if not cfg_quiet():
        print("\n".join(lines[3:]))


def _pareto_flags(points) -> list[bool]:
    """Non-dominated points when both coordinates are maximized."""
    flags = []
    for a in points:
        dominated = any(b[0] >= a[0] and b[1] >= a[1] and (b[0] > a[0] or b[1] > a[1]) for b in points)
        flags.append(not dominated)
    return flags


def cmd_sweep(cfg: RunConfig) -> None:
    ds, gmap, X = _representation(cfg)
    P_grid = [int(p) for p in cfg.raw["sweep"]["P"]]
    lam_grid = [float(v) for v in cfg.raw["sweep"]["lambda_mag"]]
    # greedy de-duplicated ranking is prefix-stable, so one ranking serves every P
    ranked = identify_pairs(X, gmap, cfg.pair_filter(max(P_grid)))
    if not ranked:
        raise DegenerateInputError("no feature pair passed the oscillation filters")
    root = cfg.run_dir / "sweep"
    fp = cfg.fingerprint()
    rows = []
    for P in P_grid:
        for lam in lam_grid:
            sub = root / f"P{P}_lmag{lam:g}"
            pairs = ranked[:P]
            _, res = _steer_once(cfg, ds, gmap, X, pairs, cfg.weights(lam), sub, cache_modes=False)
            rep = _metrics(ds, read_tensor(sub / "U_steer.pst"), read_tensor(sub / "U_orig.pst"), fp)
            _write_json(sub / "metrics.json", rep.to_dict())
            _write_json(sub / "pairs.json", {"pairs": [p.to_dict() for p in pairs]})
            rows.append([P, lam, len(pairs), rep.frac_pct_vx, rep.roi_pct_vx, rep.nrmse_vx, rep.corr_vxvy])
            log.info("sweep P=%d lambda_mag=%g: frac%% %.3f corr %.4f", P, lam, rep.frac_pct_vx,
                     rep.corr_vxvy)
    flags = _pareto_flags([(r[3], r[6]) for r in rows])
    best = max(range(len(rows)), key=lambda k: (rows[k][3], -k))
    _write_csv(root / "pareto.csv",
               ("P", "lambda_mag", "n_pairs", "frac_pct_vx", "roi_pct_vx", "nrmse_vx", "corr_vxvy",
                "pareto", "best"),
               [r + [flags[k], k == best] for k, r in enumerate(rows)])
    _manifest(root, cfg, "sweep", [cfg.dataset_dir / "embeddings.pst", cfg.dataset_dir / "target.pst"])


def cmd_report(cfg: RunConfig) -> None:
    from . import plotting

    out = cfg.run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    written = plotting.render_run(cfg.run_dir, out, cfg.dataset_dir)
    if not written:
        raise FileNotFoundError(f"nothing to report in {cfg.run_dir} (run `phasesteer steer` first)")
    _manifest(out, cfg, "report")
    for p in written:
        log.info("wrote %s", p)


HANDLERS = {
    "generate": cmd_generate, "train-sae": cmd_train_sae, "fit-pca": cmd_fit_pca,
    "identify-pairs": cmd_identify_pairs, "steer": cmd_steer, "baseline": cmd_baseline,
    "evaluate": cmd_evaluate, "sweep": cmd_sweep, "report": cmd_report,
}

_QUIET = False


def cfg_quiet() -> bool:
    return _QUIET


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="phasesteer", description="Phase steering in a frozen surrogate's latent space.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", type=Path, default=None, help="YAML config with per-module sections")
    ap.add_argument("--run-dir", type=Path, default=None, help="run directory (default: ./run)")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--quiet", action="store_true", help="only warnings and errors")
    return ap


def _category(exc: BaseException) -> tuple[int, str]:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG, "config"
    if isinstance(exc, (FileNotFoundError, FormatError, OSError)):
        return EXIT_IO, "io"
    if isinstance(exc, (NonFiniteError, TrainingDiverged, FloatingPointError)):
        return EXIT_NUMERIC, "numeric"
    if isinstance(exc, (DegenerateTargetError, DegenerateInputError, ValueError, IndexError, KeyError)):
        return EXIT_INPUT, "degenerate-input"
    raise exc


def main(argv=None) -> int:
    global _QUIET
    args = build_parser().parse_args(argv)
    _QUIET = args.quiet
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        cfg = load_config(args.config, args.run_dir, args.seed)
        cfg.run_dir.mkdir(parents=True, exist_ok=True)
        dump_config(cfg, cfg.run_dir / f"config.{args.command}.yaml")
        HANDLERS[args.command](cfg)
    except Exception as exc:  # noqa: BLE001 - mapped to categorized exit codes
        code, cat = _category(exc)
        print(f"phasesteer {args.command}: {cat} error: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
