"""Dataset container: manifest.json + binary PGM images and label maps.

Layout:
    <dir>/manifest.json     array of {id, image, label, bbox, severity,
                            domain, corruption}, UTF-8, sorted keys
    <dir>/img/<id>.pgm      P5, 8-bit, maxval 255; values are image*255
    <dir>/lbl/<id>.pgm      P5, 8-bit; pixel values exactly 0..3

Readers rescale images by /255, so write-then-read is bit-exact for images
already on the 1/255 grid (the generator quantizes).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .synth import Sample


class DatasetError(ValueError):
    pass


def write_pgm(path: Path, data: np.ndarray) -> None:
    """Write a uint8 2D array as binary PGM (P5)."""
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(data, dtype=np.uint8).tobytes())


def read_pgm(path: Path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    try:
        fields: list[bytes] = []
        pos = 0
        while len(fields) < 4:
            while raw[pos:pos + 1].isspace():
                pos += 1
            if raw[pos:pos + 1] == b"#":          # comment line
                pos = raw.index(b"\n", pos) + 1
                continue
            end = pos
            while not raw[end:end + 1].isspace():
                end += 1
            fields.append(raw[pos:end])
            pos = end
        pos += 1                                  # single whitespace after maxval
        magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    except (ValueError, IndexError) as e:
        raise DatasetError(f"malformed PGM header in {path}: {e}") from None
    if magic != b"P5" or maxval != 255:
        raise DatasetError(f"{path}: expected binary P5 with maxval 255")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=h * w, offset=pos)
    if pixels.size != h * w:
        raise DatasetError(f"{path}: truncated pixel data")
    return pixels.reshape(h, w).copy()


def image_to_u8(image: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_dataset(samples: list[Sample], directory: str | Path) -> None:
    """Persist samples; raises DatasetError on invalid labels (names sample)."""
    directory = Path(directory)
    (directory / "img").mkdir(parents=True, exist_ok=True)
    (directory / "lbl").mkdir(parents=True, exist_ok=True)
    records = []
    for s in samples:
        if not np.isin(s.labels, (0, 1, 2, 3)).all():
            bad = sorted(set(np.unique(s.labels)) - {0, 1, 2, 3})
            raise DatasetError(f"sample {s.sample_id}: label values outside 0..3: {bad}")
        write_pgm(directory / "img" / f"{s.sample_id}.pgm", image_to_u8(s.image))
        write_pgm(directory / "lbl" / f"{s.sample_id}.pgm", s.labels.astype(np.uint8))
        records.append({
            "id": s.sample_id,
            "image": f"img/{s.sample_id}.pgm",
            "label": f"lbl/{s.sample_id}.pgm",
            "bbox": list(s.gt_bbox),
            "severity": s.severity,
            "domain": s.domain_id,
            "corruption": s.corruption,
        })
    text = json.dumps(records, indent=1, sort_keys=True)
    (directory / "manifest.json").write_text(text + "\n", encoding="utf-8")


def read_dataset(directory: str | Path) -> list[Sample]:
    directory = Path(directory)
    manifest = directory / "manifest.json"
    if not manifest.exists():
        raise DatasetError(f"missing manifest: {manifest}")
    try:
        records = json.loads(manifest.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DatasetError(f"malformed manifest {manifest}: {e}") from None
    samples = []
    for rec in records:
        sid = rec.get("id", "<missing id>")
        for key in ("image", "label", "bbox"):
            if key not in rec:
                raise DatasetError(f"sample {sid}: manifest record missing {key!r}")
        img_path = directory / rec["image"]
        lbl_path = directory / rec["label"]
        for p in (img_path, lbl_path):
            if not p.exists():
                raise DatasetError(f"sample {sid}: missing file {p}")
        image = read_pgm(img_path).astype(np.float64) / 255.0
        labels = read_pgm(lbl_path).astype(np.int64)
        if not np.isin(labels, (0, 1, 2, 3)).all():
            bad = sorted(set(np.unique(labels)) - {0, 1, 2, 3})
            raise DatasetError(f"sample {sid}: label values outside 0..3: {bad}")
        samples.append(Sample(
            image=image, labels=labels, gt_bbox=tuple(rec["bbox"]),
            severity=float(rec.get("severity", 0.0)),
            domain_id=rec.get("domain", "clean"),
            sample_id=sid,
            corruption=rec.get("corruption", "none"),
        ))
    return samples
