"""Heatmap and debug exports for the inspect command."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .bundles import TextBundle, VisualBundle
from .textual import subspace_debug_dump
from .visual import RectifierConfig, calibrate_image


def write_csv_grid(path: Path, values: np.ndarray, grid: tuple[int, int]) -> None:
    np.savetxt(path, np.asarray(values, dtype=np.float64).reshape(grid), delimiter=",")


def write_pgm(path: Path, values: np.ndarray, grid: tuple[int, int]) -> None:
    """8-bit binary PGM, min-max normalized per grid (constant grids go black)."""
    h, w = grid
    vals = np.asarray(values, dtype=np.float64).reshape(h, w)
    lo, hi = vals.min(), vals.max()
    if hi - lo < 1e-30:
        pixels = np.zeros((h, w), dtype=np.uint8)
    else:
        pixels = np.round((vals - lo) / (hi - lo) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def export_visual_inspection(
    visual: VisualBundle, out_dir: str | Path, cfg: RectifierConfig
) -> list[Path]:
    """Write attention, local-contrast and gate heatmaps as CSV + PGM grids."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    calibration = calibrate_image(visual, cfg)
    grids = {
        "cls_attention": visual.cls_attention,
        "local_contrast": calibration.report.lc,
        "gates": calibration.gates,
    }
    written = []
    for name, values in grids.items():
        csv_path = out / f"{name}.csv"
        pgm_path = out / f"{name}.pgm"
        write_csv_grid(csv_path, values, visual.grid)
        write_pgm(pgm_path, values, visual.grid)
        written.extend([csv_path, pgm_path])
    return written


def export_text_inspection(
    text: TextBundle, out_dir: str | Path, strategy: str = "mean"
) -> Path:
    """Write the per-query subspace decomposition as JSON."""
    import json

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{text.query_id}_subspaces.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(subspace_debug_dump(text, strategy), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
