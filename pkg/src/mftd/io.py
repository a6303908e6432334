"""File formats: PGM density images with a sidecar header, CSV tables, atomic writes."""

from __future__ import annotations

import csv
import os
import tempfile
from pathlib import Path

import numpy as np

from .geometry import LBracketGeometry, StructuredGrid, build_lbracket

SIDECAR_SUFFIX = ".txt"


def atomic_write_bytes(path, data: bytes):
    """Write ``data`` to a temporary sibling then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(value) -> str:
    """Round-trippable text for a float; ``inf`` for sentinels."""
    return repr(float(value)) if np.isfinite(value) else ("inf" if value > 0 else "-inf")


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in row))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


# ----------------------------------------------------------------------------
# PGM density images


def _sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(SIDECAR_SUFFIX)


def write_pgm(path, grid: StructuredGrid, rho):
    """Binary PGM (P5, maxval 255) of the bounding grid, top row = largest y.

    Cells outside the L-shape are written as 0 (void). A sidecar ``.txt``
    carries the geometry and resolution needed to read the field back.
    """
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (grid.n_elements,):
        raise ValueError(f"field has {rho.size} values, grid has {grid.n_elements} cells")
    img = grid.to_image(np.clip(rho, 0.0, 1.0), fill=0.0)[::-1]
    pixels = np.rint(img * 255).astype(np.uint8)
    head = f"P5\n{grid.nx} {grid.ny}\n255\n".encode()
    atomic_write_bytes(path, head + pixels.tobytes())
    g = grid.geometry
    side = (
        f"outer_size {g.outer_size!r}\n"
        f"leg_width {g.leg_width!r}\n"
        f"load_length {g.load_length!r}\n"
        f"nondesign_depth {g.nondesign_depth!r}\n"
        f"element_size {grid.element_size!r}\n"
        f"nx {grid.nx}\nny {grid.ny}\n"
        "origin lower-left; first image row is the top of the domain\n"
    )
    atomic_write_bytes(_sidecar_path(path), side.encode())


def _pgm_tokens(data: bytes):
    """Header tokens of a P5 file and the offset of the raster."""
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    return tokens, pos + 1


def read_pgm_image(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _pgm_tokens(data)
    if magic != "P5" or int(maxval) != 255:
        raise ValueError(f"{path}: expected 8-bit P5 image")
    w, h = int(w), int(h)
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=offset)
    return raster.reshape(h, w).astype(float) / 255.0


def read_sidecar(path) -> dict:
    out = {}
    for line in _sidecar_path(path).read_text().splitlines():
        parts = line.split()
        if len(parts) == 2 and parts[0] not in ("origin",):
            out[parts[0]] = parts[1]
    return out


def grid_from_sidecar(path) -> StructuredGrid:
    meta = read_sidecar(path)
    geometry = LBracketGeometry(
        outer_size=float(meta["outer_size"]), leg_width=float(meta["leg_width"]),
        load_length=float(meta["load_length"]), nondesign_depth=float(meta["nondesign_depth"]),
    )
    return build_lbracket(geometry, float(meta["element_size"]))


def read_pgm(path, grid: StructuredGrid = None):
    """Read a density field back; returns ``(rho, grid)``.

    Values are quantized to multiples of 1/255. Fields are checked to lie
    in [0, 1] with a solid non-design strip.
    """
    grid = grid or grid_from_sidecar(path)
    img = read_pgm_image(path)
    if img.shape != (grid.ny, grid.nx):
        raise ValueError(f"{path}: image is {img.shape[1]}x{img.shape[0]}, grid is {grid.nx}x{grid.ny}")
    rho = grid.from_image(img[::-1])
    nondesign = np.flatnonzero(~grid.design)
    if np.any(rho[nondesign] < 1.0):
        raise ValueError(f"{path}: non-design cells are not solid")
    return rho, grid
