"""Array file format and dataset manifest.

Arrays (images and sinograms) are stored with a one-line ASCII header

    BFOV1 f32 <rows> <cols> <spacing_mm>\n

followed by little-endian IEEE-754 32-bit values in row-major order. The
header is diffable and the payload bit-exact, which the golden-file tests
rely on.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .phantom import Image

FORMAT_TAG = "BFOV1"


def write_array(path, values: np.ndarray, spacing: float):
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("only 2D arrays are stored")
    header = f"{FORMAT_TAG} f32 {values.shape[0]} {values.shape[1]} {spacing!r}\n"
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_array(path) -> tuple[np.ndarray, float]:
    with open(path, "rb") as f:
        header = f.readline().decode("ascii").split()
        if len(header) != 5 or header[0] != FORMAT_TAG or header[1] != "f32":
            raise ValueError(f"{path}: not a {FORMAT_TAG} array file")
        rows, cols, spacing = int(header[2]), int(header[3]), float(header[4])
        payload = f.read(4 * rows * cols)
    values = np.frombuffer(payload, dtype="<f4")
    if values.size != rows * cols:
        raise ValueError(f"{path}: truncated payload")
    return values.reshape(rows, cols).astype(np.float64), spacing


def write_image(path, img: Image):
    write_array(path, img.values, img.spacing)


def read_image(path) -> Image:
    values, spacing = read_array(path)
    return Image(values=values, spacing=spacing)


@dataclass(frozen=True)
class PairEntry:
    pair_id: str
    seed: int
    split: str                   # train | val | test
    x0_path: str
    x1_path: str
    sino_path: str


@dataclass
class DatasetManifest:
    root: str
    entries: list[PairEntry] = field(default_factory=list)

    def split(self, name: str) -> list[PairEntry]:
        return [e for e in self.entries if e.split == name]

    def resolve(self, rel_path: str) -> str:
        return os.path.join(self.root, rel_path)

    def save(self, path):
        ids = [e.pair_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("pair ids must be unique")
        doc = {
            "format": f"{FORMAT_TAG}-manifest",
            "entries": [e.__dict__ for e in self.entries],
        }
        with open(path, "w") as f:
            json.dump(doc, f, indent=1, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        with open(path) as f:
            doc = json.load(f)
        if doc.get("format") != f"{FORMAT_TAG}-manifest":
            raise ValueError(f"{path}: not a dataset manifest")
        root = os.path.dirname(os.path.abspath(path))
        manifest = cls(root=root, entries=[PairEntry(**e) for e in doc["entries"]])
        ids = set()
        for e in manifest.entries:
            if e.pair_id in ids:
                raise ValueError(f"duplicate pair id {e.pair_id}")
            ids.add(e.pair_id)
            for p in (e.x0_path, e.x1_path, e.sino_path):
                full = manifest.resolve(p)
                if not os.path.exists(full):
                    raise FileNotFoundError(f"manifest refers to missing file {full}")
        return manifest
