"""On-disk datasets: 8-bit PNG images, 4-channel CMYK ground truth, manifest.tsv.

Layout::

    <root>/manifest.tsv
    <root>/printer_<id>/sample_<n>.png        RGB
    <root>/printer_<id>/sample_<n>.cmyk.png   C, M, Y, K stored in the R, G, B, A bytes
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

MANIFEST = "manifest.tsv"
MANIFEST_FIELDS = ("path", "cmyk_path", "printer_id", "content_seed", "noise_seed")


@dataclass
class Dataset:
    rgb: np.ndarray  # (N, 3, H, W) float32
    cmyk: np.ndarray | None  # (N, 4, H, W) float32
    printer_ids: np.ndarray  # (N,)
    seeds: np.ndarray  # (N, 2) content / noise seeds
    paths: list[str]

    def __len__(self):
        return len(self.rgb)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.rgb[idx],
            None if self.cmyk is None else self.cmyk[idx],
            self.printer_ids[idx],
            self.seeds[idx],
            [self.paths[i] for i in idx],
        )


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(x) * 255.0), 0, 255).astype(np.uint8)


def from_uint8(x: np.ndarray) -> np.ndarray:
    return (np.asarray(x, np.float32) / 255.0).astype(np.float32)


def write_png(path, chw: np.ndarray) -> None:
    """Write a (C, H, W) float image in [0, 1]; C must be 3 or 4."""
    hwc = to_uint8(np.asarray(chw).transpose(1, 2, 0))
    mode = {3: "RGB", 4: "RGBA"}[hwc.shape[-1]]
    Image.fromarray(hwc, mode).save(path)


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("RGB", "RGBA"):
            im = im.convert("RGB")
        arr = np.asarray(im)
    return from_uint8(arr.transpose(2, 0, 1))


def sample_paths(printer_id: int, n: int) -> tuple[str, str]:
    base = f"printer_{printer_id}/sample_{n}"
    return base + ".png", base + ".cmyk.png"


def write_dataset(root, rgb, cmyk, printer_ids, seeds) -> Dataset:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    counters: dict[int, int] = {}
    rows, paths = [], []
    for i in range(len(rgb)):
        pid = int(printer_ids[i])
        n = counters.get(pid, 0)
        counters[pid] = n + 1
        rel, rel_cmyk = sample_paths(pid, n)
        (root / rel).parent.mkdir(parents=True, exist_ok=True)
        write_png(root / rel, rgb[i])
        if cmyk is not None:
            write_png(root / rel_cmyk, cmyk[i])
        rows.append((rel, rel_cmyk if cmyk is not None else "", pid, int(seeds[i][0]), int(seeds[i][1])))
        paths.append(rel)
    write_manifest(root, rows)
    return Dataset(
        np.asarray(rgb, np.float32),
        None if cmyk is None else np.asarray(cmyk, np.float32),
        np.asarray(printer_ids, np.int64),
        np.asarray(seeds, np.int64).reshape(-1, 2),
        paths,
    )


def write_manifest(root, rows) -> None:
    with open(Path(root) / MANIFEST, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        writer.writerows(rows)


def read_manifest(root) -> list[dict]:
    with open(Path(root) / MANIFEST, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f, delimiter="\t"))


def read_dataset(root, with_cmyk: bool = True) -> Dataset:
    root = Path(root)
    rows = read_manifest(root)
    if not rows:
        raise ValueError(f"{root} has an empty manifest")
    rgb = np.stack([read_png(root / r["path"]) for r in rows])
    cmyk = None
    if with_cmyk and all(r["cmyk_path"] for r in rows):
        cmyk = np.stack([read_png(root / r["cmyk_path"]) for r in rows])
    ids = np.array([int(r["printer_id"]) for r in rows])
    seeds = np.array([[int(r["content_seed"]), int(r["noise_seed"])] for r in rows])
    return Dataset(rgb, cmyk, ids, seeds, [r["path"] for r in rows])
