"""File formats: binary PGM (the bit-exact interchange format), PNG,
fixation CSV, and the region-map sidecar JSON.

Grayscale maps travel as 8-bit binary PGM (P5). A SalientRegionMap on disk
is the PGM of its display values plus ``<path>.json`` holding
``{"num_levels": K}``. Fixations are CSV with header ``x,y``, one 0-based
integer coordinate pair per row.
"""

import csv
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .maps import FixationMap, SaliencyMap, SalientRegionMap, to_display


def write_pgm(path, values: np.ndarray) -> None:
    """Write an 8-bit binary PGM (P5). Values are rounded half-up to 0..255."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("PGM data must be 2-D")
    pixels = np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM (P5) into a float64 array."""
    with open(path, "rb") as f:
        data = f.read()
    magic, pos = _next_token(data, 0)
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    w, pos = _next_token(data, pos)
    h, pos = _next_token(data, pos)
    maxval, pos = _next_token(data, pos)
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    raster = data[pos : pos + w * h]
    if len(raster) < w * h:
        raise ValueError(f"{path}: truncated raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).astype(np.float64)


def _next_token(data, pos):
    # skip whitespace and '#' comments, return (token, position after the
    # single whitespace byte that terminated it)
    while pos < len(data):
        ch = data[pos : pos + 1]
        if ch == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < len(data) and not data[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ValueError("malformed PGM header")
    return data[start:pos], pos + 1


def write_png(path, values: np.ndarray) -> None:
    """Write an 8-bit grayscale PNG."""
    values = np.asarray(values, dtype=np.float64)
    pixels = np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)
    Image.fromarray(pixels, mode="L").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    """Read a PNG as 8-bit grayscale (color inputs are converted)."""
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float64)


def read_gray(path) -> np.ndarray:
    """Read a grayscale map, dispatching on extension (.pgm or .png)."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        return read_png(path)
    return read_pgm(path)


def read_saliency(path) -> SaliencyMap:
    return SaliencyMap(read_gray(path))


def write_saliency(path, sm: SaliencyMap) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        write_png(path, sm.values)
    else:
        write_pgm(path, sm.values)


def write_fixations(path, fm: FixationMap) -> None:
    """Write fixations as CSV with header x,y, one row per hit pixel."""
    ys, xs = np.nonzero(fm.hits)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "y"])
        for x, y in zip(xs.tolist(), ys.tolist()):
            writer.writerow([x, y])


def read_fixations(path, width: int, height: int) -> FixationMap:
    """Read a fixation CSV; image dimensions are supplied alongside."""
    points = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or set(reader.fieldnames) != {"x", "y"}:
            raise ValueError(f"{path}: expected CSV header 'x,y'")
        for row in reader:
            points.append((int(row["x"]), int(row["y"])))
    return FixationMap.from_points(points, width, height)


def _sidecar_path(pgm_path) -> Path:
    return Path(str(pgm_path) + ".json")


def write_region_map(path, srm: SalientRegionMap) -> None:
    """Write display-value PGM plus the ``{"num_levels": K}`` sidecar."""
    write_pgm(path, to_display(srm).values)
    with open(_sidecar_path(path), "w") as f:
        json.dump({"num_levels": srm.num_levels}, f, sort_keys=True)
        f.write("\n")


def read_region_map(path) -> SalientRegionMap:
    """Read a display-value PGM back into level indices via its sidecar."""
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise ValueError(f"missing sidecar {sidecar}")
    with open(sidecar) as f:
        k = int(json.load(f)["num_levels"])
    display = read_pgm(path)
    # nearest level inverts the display mapping exactly for K <= 256
    levels = np.floor(display * (k - 1) / 255.0 + 0.5).astype(np.int64)
    return SalientRegionMap(levels, k)
