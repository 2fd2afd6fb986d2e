"""File formats: binary PGM images, flat-double checkpoints, loss CSVs."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError(f"PGM needs a 2D uint8 image, got {img.dtype} {img.shape}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    if tokens[0] != "P5" or tokens[3] != "255":
        raise ValueError(f"{path}: only 8-bit binary PGM is supported")
    w, h = int(tokens[1]), int(tokens[2])
    pos += 1
    return np.frombuffer(data[pos : pos + w * h], dtype=np.uint8).reshape(h, w).copy()


def export_depth_pgm(path, depth: np.ndarray) -> None:
    """Depth in [0, 1] stored as round(255 * d)."""
    d = np.asarray(depth, dtype=np.float64).squeeze()
    if d.ndim != 2:
        raise ValueError(f"depth map must be 2D, got {d.shape}")
    write_pgm(path, np.round(255.0 * np.clip(d, 0.0, 1.0)).astype(np.uint8))


# --------------------------------------------------------------------------
# checkpoints: <stem>.bin holds little-endian doubles, <stem>.json the layout


def save_checkpoint(stem, params: Mapping[str, np.ndarray], extra: dict | None = None) -> tuple[Path, Path]:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    manifest = {"dtype": "<f8", "tensors": [], "extra": extra or {}}
    offset = 0
    chunks = []
    for name in sorted(params):
        arr = np.asarray(params[name], dtype="<f8", order="C")
        manifest["tensors"].append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size
    bin_path, json_path = stem.with_suffix(".bin"), stem.with_suffix(".json")
    bin_path.write_bytes(b"".join(chunks))
    json_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return bin_path, json_path


def load_checkpoint(stem) -> tuple[dict[str, np.ndarray], dict]:
    stem = Path(stem)
    manifest = json.loads(stem.with_suffix(".json").read_text())
    flat = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8")
    params = {}
    for entry in manifest["tensors"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        params[entry["name"]] = flat[entry["offset"] : entry["offset"] + n].reshape(entry["shape"]).astype(np.float64)
    return params, manifest.get("extra", {})


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


LOSS_COLUMNS = ["step", "edl", "cdl", "binary", "overall"]


def write_loss_csv(path, rows: Iterable[Mapping[str, float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOSS_COLUMNS)
        for r in rows:
            w.writerow([int(r["step"])] + [repr(float(r[c])) for c in LOSS_COLUMNS[1:]])


def read_loss_csv(path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
