"""Figure rendering for finished run directories.

Reads a run's ``manifest.json`` and renders matplotlib figures next to the
delimited outputs: density evolution and diagnostics for solves, bifurcation
maps for scans, trajectory summaries for simulations, and distance decay for
chaoticity runs.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _read_csv(path: str) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    return {k: np.array([float(r[k]) if r[k] not in ("", None) else np.nan for r in rows])
            for k in rows[0] if k not in ("simulator", "positions", "masses")}


def _save(fig, out_dir: str, name: str, written: list) -> None:
    path = os.path.join(out_dir, name)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    written.append(path)


def _render_solve(src: str, out_dir: str, manifest: dict, written: list) -> None:
    densities = sorted(f for f in manifest["outputs"] if f.startswith("density_t"))
    if densities:
        fig, ax = plt.subplots(figsize=(7, 4))
        for name in densities:
            data = _read_csv(os.path.join(src, name))
            t = name[len("density_t"):-len(".csv")]
            x = np.repeat(np.concatenate([data["x_left"], data["x_right"][-1:]]), 2)[1:-1]
            y = np.repeat(data["level"], 2)
            ax.plot(x, y, label=f"t = {t}")
        ax.set_xlabel("opinion")
        ax.set_ylabel("density")
        ax.legend()
        cfg = manifest.get("config", {})
        ax.set_title(f"density evolution (delta={cfg.get('delta')}, w={cfg.get('w')})")
        _save(fig, out_dir, "evolution.png", written)
    if "diagnostics.csv" in manifest["outputs"]:
        d = _read_csv(os.path.join(src, "diagnostics.csv"))
        fig, axes = plt.subplots(1, 2, figsize=(10, 3.5))
        axes[0].plot(d["t"], d["sigma"])
        axes[0].set_xlabel("t")
        axes[0].set_ylabel("sigma")
        axes[1].plot(d["t"], d["mu2"])
        axes[1].set_xlabel("t")
        axes[1].set_ylabel("mu2")
        _save(fig, out_dir, "diagnostics.png", written)


def _render_simulate(src: str, out_dir: str, manifest: dict, written: list) -> None:
    if "trajectory.csv" in manifest["outputs"]:
        d = _read_csv(os.path.join(src, "trajectory.csv"))
        fig, axes = plt.subplots(1, 2, figsize=(10, 3.5))
        axes[0].plot(d["step"], d["sigma"])
        axes[0].set_xlabel("step")
        axes[0].set_ylabel("sigma")
        axes[1].step(d["step"], d["n_clusters"], where="post")
        axes[1].set_xlabel("step")
        axes[1].set_ylabel("clusters")
        _save(fig, out_dir, "trajectory.png", written)
    if "opinions.csv" in manifest["outputs"]:
        with open(os.path.join(src, "opinions.csv"), newline="") as fh:
            vals = [float(r[0]) for r in list(csv.reader(fh))[1:] if r]
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.hist(vals, bins=50, range=(0, 1))
        ax.set_xlabel("opinion")
        ax.set_ylabel("peers")
        _save(fig, out_dir, "opinions.png", written)


def _render_scan(src: str, out_dir: str, manifest: dict, written: list) -> None:
    with open(os.path.join(src, "scan.csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    alphas = sorted({float(r["alpha"]) for r in rows if r["alpha"] != ""})
    deltas = sorted({float(r["delta"]) for r in rows})
    if alphas:
        # extremists scan: classification map and first-half center of mass
        grid = np.full((len(deltas), len(alphas)), np.nan)
        com = np.full_like(grid, np.nan)
        for r in rows:
            if r["n_components"] == "":
                continue
            i = deltas.index(float(r["delta"]))
            j = alphas.index(float(r["alpha"]))
            grid[i, j] = float(r["n_components"])
            com[i, j] = float(r["first_half_com"])
        fig, axes = plt.subplots(1, 2, figsize=(11, 4))
        im0 = axes[0].pcolormesh(alphas, deltas, grid, shading="nearest")
        fig.colorbar(im0, ax=axes[0], label="components")
        axes[0].set_xlabel("alpha")
        axes[0].set_ylabel("delta")
        axes[0].set_title("consensus components")
        im1 = axes[1].pcolormesh(alphas, deltas, com, shading="nearest")
        fig.colorbar(im1, ax=axes[1], label="first-half center of mass")
        axes[1].set_xlabel("alpha")
        axes[1].set_ylabel("delta")
        _save(fig, out_dir, "bifurcation_extremists.png", written)
    else:
        ncomp = [float(r["n_components"]) if r["n_components"] != "" else np.nan for r in rows]
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.step([float(r["delta"]) for r in rows], ncomp, where="post")
        ax.set_xlabel("delta")
        ax.set_ylabel("components")
        _save(fig, out_dir, "bifurcation_delta.png", written)


def _render_chaos(src: str, out_dir: str, manifest: dict, written: list) -> None:
    with open(os.path.join(src, "chaoticity.csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    fig, ax = plt.subplots(figsize=(6, 4))
    for sim in sorted({r["simulator"] for r in rows}):
        pts = [(int(r["n"]), float(r["median_kolmogorov"]), float(r["median_wasserstein1"]))
               for r in rows if r["simulator"] == sim]
        pts.sort()
        n = [p[0] for p in pts]
        ax.loglog(n, [p[1] for p in pts], "o-", label=f"{sim}: Kolmogorov")
        ax.loglog(n, [p[2] for p in pts], "s--", label=f"{sim}: Wasserstein-1")
    ax.set_xlabel("N")
    ax.set_ylabel("median distance to kinetic law")
    ax.legend()
    _save(fig, out_dir, "chaoticity.png", written)


def render(src: str, out_dir: str) -> list:
    """Render the figures for a run directory; returns written file paths."""
    with open(os.path.join(src, "manifest.json")) as fh:
        manifest = json.load(fh)
    command = manifest.get("command", "")
    written: list = []
    if command == "solve":
        _render_solve(src, out_dir, manifest, written)
    elif command == "simulate":
        _render_simulate(src, out_dir, manifest, written)
    elif command.startswith("scan"):
        _render_scan(src, out_dir, manifest, written)
    elif command == "chaos":
        _render_chaos(src, out_dir, manifest, written)
    return written
