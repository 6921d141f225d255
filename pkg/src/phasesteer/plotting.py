"""Figures for the `report` subcommand.

Each figure is written next to a CSV holding exactly the plotted series, so
the numbers behind a picture are always at hand.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .modes import load_decomposition  # noqa: E402
from .steering import rotate_coefficients  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 100,
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.2,
}

# PNG metadata otherwise embeds the matplotlib version string
_META = {"Software": None}


def _read_csv(path: Path) -> tuple[list, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])


def _write_csv(path: Path, header, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(v)) for v in row])


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return path


def loss_histories(run_dir: Path, out: Path) -> list[Path]:
    curves = {}
    if (run_dir / "steer" / "loss_history.csv").exists():
        curves["rotation"] = run_dir / "steer" / "loss_history.csv"
    for kind in ("scale", "additive", "clamp"):
        p = run_dir / "baseline" / kind / "loss_history.csv"
        if p.exists():
            curves[kind] = p
    if not curves:
        return []
    fig, ax = plt.subplots()
    cols, header = [], []
    for name, path in curves.items():
        _, data = _read_csv(path)
        ax.semilogy(data[:, 0], np.maximum(data[:, 1], 1e-300), label=name)
        header += [f"{name}_iteration", f"{name}_total"]
        cols += [data[:, 0], data[:, 1]]
    ax.set_xlabel("iteration")
    ax.set_ylabel("composite loss")
    ax.legend(frameon=False)
    n = min(len(c) for c in cols)
    _write_csv(out / "loss_history.csv", header, [c[:n] for c in cols])
    return [out / "loss_history.csv", _save(fig, out / "loss_history.png")]


def phase_offsets(run_dir: Path, out: Path) -> list[Path]:
    path = run_dir / "steer" / "phase_trajectories.csv"
    if not path.exists():
        return []
    header, data = _read_csv(path)
    fig, ax = plt.subplots()
    for k in range(1, data.shape[1]):
        ax.plot(data[:, 0], data[:, k], label=header[k])
    ax.set_xlabel("frame within horizon")
    ax.set_ylabel(r"phase offset $\Delta\phi_k$ [rad]")
    ax.legend(frameon=False, ncol=2)
    _write_csv(out / "phase_trajectories.csv", header, data.T)
    return [out / "phase_trajectories.csv", _save(fig, out / "phase_trajectories.png")]


def pair_series(run_dir: Path, out: Path) -> list[Path]:
    """Node-averaged original and rotated series of every steered pair."""
    pairs_path = run_dir / "pairs" / "pairs.json"
    modes = run_dir / "steer" / "modes"
    phases_path = run_dir / "steer" / "phase_trajectories.csv"
    if not (pairs_path.exists() and modes.exists() and phases_path.exists()):
        return []
    pairs = json.loads(pairs_path.read_text())["pairs"]
    _, phases = _read_csv(phases_path)
    fig, axes = plt.subplots(len(pairs), 1, sharex=True, figsize=(6.4, 1.6 * len(pairs) + 0.6), squeeze=False)
    header, cols = ["t"], [phases[:, 0]]
    for k, p in enumerate(pairs):
        mi, mj = load_decomposition(modes, p["i"]), load_decomposition(modes, p["j"])
        wi, wj = mi.phi.mean(axis=0), mj.phi.mean(axis=0)
        ci, cj = rotate_coefficients(mi.coeffs, mj.coeffs, phases[:, k + 1])
        series = [mi.coeffs @ wi + mi.mu.mean(), mj.coeffs @ wj + mj.mu.mean(),
                  ci @ wi + mi.mu.mean(), cj @ wj + mj.mu.mean()]
        ax = axes[k, 0]
        ax.plot(phases[:, 0], series[0], color="C0", label=f"f{p['i']}")
        ax.plot(phases[:, 0], series[1], color="C1", label=f"f{p['j']}")
        ax.plot(phases[:, 0], series[2], color="C0", ls="--", label=f"f{p['i']} steered")
        ax.plot(phases[:, 0], series[3], color="C1", ls="--", label=f"f{p['j']} steered")
        ax.set_ylabel(f"pair {k}")
        ax.legend(frameon=False, ncol=4, fontsize=6, loc="upper right")
        header += [f"f{p['i']}", f"f{p['j']}", f"f{p['i']}_steered", f"f{p['j']}_steered"]
        cols += series
    axes[-1, 0].set_xlabel("frame within horizon")
    _write_csv(out / "pair_series.csv", header, cols)
    return [out / "pair_series.csv", _save(fig, out / "pair_series.png")]


def frac_map(run_dir: Path, out: Path, dataset_dir: Path) -> list[Path]:
    path = run_dir / "evaluate" / "per_node_frac_rotation.csv"
    if not path.exists():
        return []
    _, data = _read_csv(path)
    fig, ax = plt.subplots(figsize=(7.0, 2.6))
    ok = np.isfinite(data[:, 3])
    lim = max(np.percentile(np.abs(data[ok, 3]), 95), 1.0) if ok.any() else 100.0
    sc = ax.scatter(data[ok, 1], data[ok, 2], c=data[ok, 3], s=12, cmap="RdBu_r", vmin=-lim, vmax=lim)
    fig.colorbar(sc, ax=ax, label="frac% (vx)")
    geo_path = dataset_dir / "geometry.json"
    if geo_path.exists():
        geo = json.loads(geo_path.read_text())
        x0, x1, y0, y1 = geo["roi"]
        ax.add_patch(plt.Rectangle((x0, y0), x1 - x0, y1 - y0, fill=False, ls="--", ec="green"))
        ax.add_patch(plt.Circle(geo["obstacle_center"], geo["obstacle_radius"], color="0.6"))
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    _write_csv(out / "per_node_frac.csv", ["node", "x", "y", "frac"], data.T)
    return [out / "per_node_frac.csv", _save(fig, out / "per_node_frac.png")]


def method_bars(run_dir: Path, out: Path) -> list[Path]:
    path = run_dir / "evaluate" / "metrics.json"
    if not path.exists():
        return []
    metrics = json.loads(path.read_text())
    names = list(metrics)
    frac = [metrics[n]["frac_pct_vx"] for n in names]
    fig, ax = plt.subplots()
    ax.bar(range(len(names)), frac, color=["C0" if v >= 0 else "C3" for v in frac])
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names)
    ax.set_ylabel("frac% (vx)")
    with open(out / "methods.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "frac_pct_vx", "roi_pct_vx", "nrmse_vx", "corr_vxvy"])
        for n in names:
            m = metrics[n]
            w.writerow([n] + [repr(float(m[k])) for k in ("frac_pct_vx", "roi_pct_vx", "nrmse_vx", "corr_vxvy")])
    return [out / "methods.csv", _save(fig, out / "methods.png")]


def pareto(run_dir: Path, out: Path) -> list[Path]:
    path = run_dir / "sweep" / "pareto.csv"
    if not path.exists():
        return []
    header, data = _read_csv(path)
    col = {h: k for k, h in enumerate(header)}
    fig, ax = plt.subplots()
    front = data[:, col["pareto"]] > 0
    ax.scatter(data[:, col["corr_vxvy"]], data[:, col["frac_pct_vx"]], c=data[:, col["P"]], cmap="viridis", s=18)
    order = np.argsort(data[front, col["corr_vxvy"]])
    ax.plot(data[front, col["corr_vxvy"]][order], data[front, col["frac_pct_vx"]][order], color="k", lw=0.8)
    best = data[:, col["best"]] > 0
    ax.scatter(data[best, col["corr_vxvy"]], data[best, col["frac_pct_vx"]], marker="*", s=120, color="C3")
    ax.set_xlabel("Corr (vx, vy)")
    ax.set_ylabel("frac% (vx)")
    return [_save(fig, out / "pareto.png")]


def render_run(run_dir, out, dataset_dir=None) -> list[Path]:
    run_dir, out = Path(run_dir), Path(out)
    dataset_dir = Path(dataset_dir) if dataset_dir else run_dir / "dataset"
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    with plt.rc_context(STYLE):
        written += loss_histories(run_dir, out)
        written += phase_offsets(run_dir, out)
        written += pair_series(run_dir, out)
        written += frac_map(run_dir, out, dataset_dir)
        written += method_bars(run_dir, out)
        written += pareto(run_dir, out)
    return written
