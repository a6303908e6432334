"""PNG figures for a finished run (objective space, hypervolume history, front designs)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)


def objective_space(path, rows):
    """Archive scatter in (sigma_max, V/Vmax); front 1 joined by a step line."""
    fig, ax = plt.subplots(figsize=(5, 4))
    data = np.array([(s, v, r) for _, s, v, r in rows if np.isfinite(s)], dtype=float).reshape(-1, 3)
    if len(data):
        rest = data[data[:, 2] > 1]
        ax.scatter(rest[:, 0], rest[:, 1], s=14, c="tab:blue", alpha=0.6, label="archive")
        front = data[data[:, 2] == 1]
        front = front[np.argsort(front[:, 0])]
        ax.plot(front[:, 0], front[:, 1], "o-", c="tab:red", ms=4, drawstyle="steps-post", label="front 1")
        ax.legend(frameon=False, fontsize=8)
    ax.set_xlabel("max von Mises stress")
    ax.set_ylabel("V / Vmax")
    _save(fig, Path(path))


def hypervolume_history(path, hv_history):
    h = np.asarray(hv_history, dtype=float).reshape(-1, 7)
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(h[:, 0], h[:, 1], c="k")
    ax.set_xlabel("iteration")
    ax.set_ylabel("hypervolume")
    _save(fig, Path(path))


def front_designs(path, grid, fields, titles, max_panels=12):
    """Density images of (at most ``max_panels``) front members, black = solid."""
    n = min(len(fields), max_panels)
    if n == 0:
        return
    cols = min(n, 4)
    rows = int(np.ceil(n / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 2.2 * rows), squeeze=False)
    for ax in axes.ravel():
        ax.axis("off")
    for ax, rho, title in zip(axes.ravel(), fields[:n], titles[:n]):
        img = grid.to_image(rho, fill=np.nan)
        ax.imshow(img, origin="lower", cmap="gray_r", vmin=0, vmax=1, interpolation="nearest")
        ax.set_title(title, fontsize=7)
    _save(fig, Path(path))


def render_report(directory, state, grid, rows):
    directory = Path(directory)
    objective_space(directory / "objective_space.png", rows)
    if state.hv_history:
        hypervolume_history(directory / "hypervolume.png", state.hv_history)
    index = {int(i): k for k, i in enumerate(state.population.ids)}
    front = [r for r in rows if r[3] == 1 and np.isfinite(r[1])]
    front.sort(key=lambda r: r[1])
    fields = [state.population.fields[index[r[0]]] for r in front]
    titles = [f"#{r[0]}  s={r[1]:.3g}  V={r[2]:.3f}" for r in front]
    front_designs(directory / "front_designs.png", grid, fields, titles)
