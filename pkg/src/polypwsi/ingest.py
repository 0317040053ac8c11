"""Dataset manifests, raster image I/O and the train/validation split."""

from __future__ import annotations

import csv
import io
import math
import os
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import ClassLabel, RandomStream, as_raster, parse_label
from .errors import (
    CorruptImage,
    DuplicateId,
    EmptyDataset,
    OutOfBounds,
    ParseError,
    RangeError,
    UnknownLabel,
    UnsupportedImage,
)

SPLIT_TAGS = ("train", "validation", "test", "unassigned")
SLIDE_COLUMNS = ("id", "path", "label", "split")
CROP_COLUMNS = ("id", "parent", "x", "y", "width", "height", "label")

# Guard against headers that would make us allocate absurd buffers.
MAX_IMAGE_SIDE = 1 << 16


@dataclass(frozen=True)
class SlideRecord:
    id: str
    image_path: str
    reference_label: ClassLabel
    split_tag: str = "unassigned"

    def resolve(self, root=None) -> Path:
        path = Path(self.image_path)
        if root is not None and not path.is_absolute():
            path = Path(root) / path
        return path


@dataclass(frozen=True)
class CropRecord:
    id: str
    parent_slide_id: str
    bounds: tuple[int, int, int, int]
    reference_label: ClassLabel

    def cut(self, parent: np.ndarray) -> np.ndarray:
        x, y, w, h = self.bounds
        height, width = parent.shape[:2]
        if x + w > width or y + h > height:
            raise OutOfBounds(
                f"crop {self.id!r} bounds {self.bounds} exceed parent image {width}x{height}"
            )
        return parent[y:y + h, x:x + w].copy()


# -- manifests ----------------------------------------------------------------


def _data_lines(text: str):
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        yield lineno, line.rstrip("\r\n").split("\t")


def _label_at(text, lineno):
    try:
        return parse_label(text)
    except UnknownLabel:
        raise UnknownLabel(text, line=lineno) from None


def _int_at(text, name, lineno):
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"{name} must be an integer, got {text!r}", line=lineno) from None


def parse_manifest(text: str) -> list:
    """Parse manifest text; the header row decides slide vs. crop records."""
    rows = _data_lines(text)
    try:
        header_line, header = next(rows)
    except StopIteration:
        raise ParseError("manifest is empty (no header row)") from None
    header = tuple(h.strip().lower() for h in header)
    if header == SLIDE_COLUMNS:
        build = _slide_row
    elif header == CROP_COLUMNS:
        build = _crop_row
    else:
        raise ParseError(f"unrecognized header {header!r}", line=header_line)

    records, seen = [], set()
    for lineno, fields in rows:
        if len(fields) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(fields)}", line=lineno)
        record = build([f.strip() for f in fields], lineno)
        if record.id in seen:
            raise DuplicateId(record.id)
        seen.add(record.id)
        records.append(record)
    return records


def _slide_row(fields, lineno):
    rid, path, label, split = fields
    if not rid:
        raise ParseError("empty id", line=lineno)
    if not path:
        raise ParseError("empty image path", line=lineno)
    split = split.lower() or "unassigned"
    if split not in SPLIT_TAGS:
        raise ParseError(f"split must be one of {SPLIT_TAGS}, got {split!r}", line=lineno)
    return SlideRecord(rid, path, _label_at(label, lineno), split)


def _crop_row(fields, lineno):
    rid, parent, x, y, w, h, label = fields
    if not rid or not parent:
        raise ParseError("empty id or parent", line=lineno)
    bounds = tuple(_int_at(v, n, lineno) for v, n in zip((x, y, w, h), ("x", "y", "width", "height")))
    if bounds[0] < 0 or bounds[1] < 0 or bounds[2] < 1 or bounds[3] < 1:
        raise ParseError(f"invalid crop bounds {bounds}", line=lineno)
    return CropRecord(rid, parent, bounds, _label_at(label, lineno))


def load_manifest(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return parse_manifest(fh.read())


def format_manifest(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
    if records and isinstance(records[0], CropRecord):
        writer.writerow(CROP_COLUMNS)
        for r in records:
            writer.writerow([r.id, r.parent_slide_id, *r.bounds, r.reference_label.code])
    else:
        writer.writerow(SLIDE_COLUMNS)
        for r in records:
            writer.writerow([r.id, r.image_path, r.reference_label.code, r.split_tag])
    return buf.getvalue()


# -- images -----------------------------------------------------------------

_PNM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode a binary portable pixmap (P6, maxval 255)."""
    if data[:2] != b"P6":
        raise UnsupportedImage(f"not a binary PPM (magic {data[:2]!r})")
    pos = 2
    values = []
    for _ in range(3):
        m = _PNM_TOKEN.match(data, pos)
        if m is None:
            raise CorruptImage("truncated PPM header")
        try:
            values.append(int(m.group(1)))
        except ValueError:
            raise CorruptImage(f"bad PPM header field {m.group(1)!r}") from None
        pos = m.end()
    width, height, maxval = values
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise CorruptImage("truncated PPM header")
    pos += 1
    if width < 1 or height < 1:
        raise CorruptImage(f"invalid PPM dimensions {width}x{height}")
    if width > MAX_IMAGE_SIDE or height > MAX_IMAGE_SIDE:
        raise UnsupportedImage(f"PPM dimensions {width}x{height} exceed {MAX_IMAGE_SIDE}")
    if maxval != 255:
        raise UnsupportedImage(f"only maxval 255 is supported, got {maxval}")
    expected = width * height * 3
    body = data[pos:pos + expected]
    if len(body) < expected:
        raise CorruptImage(f"PPM body has {len(body)} bytes, header declares {expected}")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3).copy()


def encode_ppm(image) -> bytes:
    img = as_raster(image)
    height, width = img.shape[:2]
    return b"P6\n%d %d\n255\n" % (width, height) + img.tobytes()


def read_image(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"P6":
        return decode_ppm(data)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return _read_png(data)
    raise UnsupportedImage(f"{path}: unsupported image format")


def _read_png(data: bytes) -> np.ndarray:
    try:
        from PIL import Image
    except ImportError:  # pragma: no cover
        raise UnsupportedImage("PNG support requires Pillow") from None
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            return as_raster(np.asarray(im.convert("RGB")))
    except (OSError, SyntaxError) as exc:
        raise CorruptImage(f"unreadable PNG: {exc}") from None


def write_image(image, path) -> None:
    """Write ``image`` atomically; format follows the suffix (.ppm or .png)."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(as_raster(image), mode="RGB").save(buf, format="PNG")
        payload = buf.getvalue()
    else:
        payload = encode_ppm(image)
    atomic_write_bytes(path, payload)


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# -- splitting ----------------------------------------------------------------


def round_half_up(x: float) -> int:
    # Nudge absorbs representation error, e.g. 20 * 0.15 == 3.0000000000000004.
    return int(math.floor(x + 0.5 + 1e-9))


def validation_count(n: int, fraction: float) -> int:
    k = round_half_up(n * fraction)
    if n >= 2:
        k = max(k, 1)
    return min(k, n)


def split_dataset(records, validation_fraction: float, rng: RandomStream):
    """Stratified split: per class, ``round(n_c * fraction)`` go to validation.

    Returned lists keep the input order. Split tags are updated on the returned
    records.
    """
    records = list(records)
    if not records:
        raise EmptyDataset("cannot split an empty record list")
    if not 0 < validation_fraction < 1:
        raise RangeError(f"validation_fraction must lie in (0, 1), got {validation_fraction}")

    by_class: dict[ClassLabel, list[int]] = {}
    for i, r in enumerate(records):
        by_class.setdefault(r.reference_label, []).append(i)

    chosen = set()
    for label in sorted(by_class):
        idx = by_class[label]
        k = validation_count(len(idx), validation_fraction)
        # Each class draws from its own child stream so adding records of one
        # class does not reshuffle another.
        picks = rng.spawn("split", label.code).sample_indices(len(idx), k)
        chosen.update(idx[j] for j in picks)

    train, validation = [], []
    for i, r in enumerate(records):
        if i in chosen:
            validation.append(_tagged(r, "validation"))
        else:
            train.append(_tagged(r, "train"))
    return train, validation


def _tagged(record, tag):
    if isinstance(record, SlideRecord):
        return replace(record, split_tag=tag)
    return record
