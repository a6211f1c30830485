"""Field output: delimited grids, heatmap PNGs and grayscale PGMs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

FIELD_HEADER = "x_index,y_index,value"


def write_field_csv(grid: np.ndarray, path: str | Path) -> None:
    """One row per node; ``grid`` is indexed ``[y, x]``."""
    grid = np.asarray(grid, dtype=float)
    ny, nx = grid.shape
    with open(path, "w") as fh:
        fh.write(FIELD_HEADER + "\n")
        for y in range(ny):
            fh.writelines(f"{x},{y},{grid[y, x]:.17g}\n" for x in range(nx))


def read_field_csv(path: str | Path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    xs, ys = data[:, 0].astype(int), data[:, 1].astype(int)
    grid = np.zeros((ys.max() + 1, xs.max() + 1))
    grid[ys, xs] = data[:, 2]
    return grid


def write_heatmap(grid: np.ndarray, path: str | Path, title: str = "",
                  mask: np.ndarray | None = None, cmap: str = "viridis") -> None:
    """PNG heatmap with the first array row at the bottom; masked nodes are blank."""
    grid = np.asarray(grid, dtype=float)
    shown = np.ma.masked_where(~mask, grid) if mask is not None else grid
    fig, ax = plt.subplots(figsize=(4.8, 4.0), dpi=120)
    im = ax.imshow(shown, origin="lower", cmap=cmap, interpolation="nearest")
    ax.set_xlabel("x index")
    ax.set_ylabel("y index")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    # Fixed metadata keeps repeated runs byte-identical.
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def write_pgm(grid: np.ndarray, path: str | Path) -> None:
    """Binary 8-bit PGM, min-max normalized, top row = largest y."""
    grid = np.asarray(grid, dtype=float)
    lo, hi = float(grid.min()), float(grid.max())
    scaled = np.zeros_like(grid) if hi == lo else (grid - lo) / (hi - lo)
    pixels = np.round(scaled[::-1] * 255).astype(np.uint8)
    ny, nx = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {ny}\n255\n".encode())
        fh.write(pixels.tobytes())
