"""Bit-exact file formats: PGM images, SMAP rasters, ICDAR box text, model files."""

from __future__ import annotations

import os
import re
import struct
from typing import List, Union

import numpy as np

from textadapt.core import (
    FormatError,
    GrayImage,
    PixelPartition,
    QuadBox,
    ScoreMap,
    StrokeWidthMap,
)

PathLike = Union[str, os.PathLike]

SMAP_MAGIC = b"SMAP"
SMAP_VERSION = 1
MODEL_MAGIC = b"TADM"
MODEL_VERSION = 1

_SMAP_HEADER = struct.Struct("<4sBII")


# ---------------------------------------------------------------- PGM


def decode_pgm(buf: bytes) -> GrayImage:
    pos = 0
    fields = []
    if buf[:2] != b"P5":
        raise FormatError(f"byte 0: not a binary PGM (P5) file, got {buf[:2]!r}")
    pos = 2
    while len(fields) < 3:
        # whitespace and comments between header tokens
        while pos < len(buf) and (buf[pos : pos + 1].isspace() or buf[pos : pos + 1] == b"#"):
            if buf[pos : pos + 1] == b"#":
                nl = buf.find(b"\n", pos)
                pos = len(buf) if nl < 0 else nl + 1
            else:
                pos += 1
        m = re.compile(rb"\d+").match(buf, pos)
        if m is None:
            raise FormatError(f"byte {pos}: malformed PGM header")
        fields.append(int(m.group()))
        pos = m.end()
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise FormatError(f"byte {pos}: expected single whitespace after PGM header")
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError(f"byte {pos}: invalid PGM size {width}x{height}")
    if maxval != 255:
        raise FormatError(f"byte {pos}: only 8-bit PGM (maxval 255) is supported, got {maxval}")
    need = width * height
    have = len(buf) - pos
    if have < need:
        raise FormatError(f"byte {len(buf)}: truncated PGM raster, need {need} bytes, got {have}")
    if have > need:
        raise FormatError(f"byte {pos + need}: {have - need} trailing bytes after PGM raster")
    raster = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    return GrayImage(raster.reshape(height, width) / 255.0)


def encode_pgm(image: GrayImage) -> bytes:
    raster = np.floor(image.data * 255.0 + 0.5).astype(np.uint8)
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + raster.tobytes()


def read_pgm(path: PathLike) -> GrayImage:
    with open(path, "rb") as fh:
        return decode_pgm(fh.read())


def write_pgm(image: GrayImage, path: PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pgm(image))


# ---------------------------------------------------------------- SMAP


def encode_raster(data) -> bytes:
    arr = np.asarray(getattr(data, "data", data))
    if arr.ndim != 2:
        raise ValueError("SMAP payload must be 2-D")
    h, w = arr.shape
    return _SMAP_HEADER.pack(SMAP_MAGIC, SMAP_VERSION, w, h) + arr.astype("<f4").tobytes()


def decode_raster(buf: bytes) -> np.ndarray:
    if len(buf) < _SMAP_HEADER.size:
        raise FormatError(f"byte {len(buf)}: truncated SMAP header")
    magic, version, w, h = _SMAP_HEADER.unpack_from(buf, 0)
    if magic != SMAP_MAGIC:
        raise FormatError(f"byte 0: bad SMAP magic {magic!r}")
    if version != SMAP_VERSION:
        raise FormatError(f"byte 4: unsupported SMAP version {version}")
    if w < 1 or h < 1:
        raise FormatError(f"byte 5: invalid SMAP size {w}x{h}")
    payload = len(buf) - _SMAP_HEADER.size
    if payload != 4 * w * h:
        raise FormatError(
            f"byte {_SMAP_HEADER.size}: payload is {payload} bytes, header says {w}x{h} floats"
        )
    arr = np.frombuffer(buf, dtype="<f4", offset=_SMAP_HEADER.size).reshape(h, w)
    return arr.astype(np.float32)


def read_raster(path: PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_raster(fh.read())


def write_smap(raster, path: PathLike) -> None:
    """Write any raster type (or a 2-D array) as SMAP."""
    with open(path, "wb") as fh:
        fh.write(encode_raster(raster))


def read_smap(path: PathLike) -> ScoreMap:
    try:
        return ScoreMap(read_raster(path))
    except ValueError as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: {exc}") from exc


def read_stroke_map(path: PathLike) -> StrokeWidthMap:
    return StrokeWidthMap(read_raster(path))


def read_partition(path: PathLike) -> PixelPartition:
    arr = read_raster(path)
    if not np.all(arr == np.round(arr)):
        raise FormatError(f"{path}: partition raster holds non-integer codes")
    try:
        return PixelPartition(arr.astype(np.int8))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------- ICDAR boxes


def _fmt_num(v: float) -> str:
    v = float(v)
    if v.is_integer():
        return str(int(v))
    return repr(v)


def parse_icdar_boxes(text: str, scored: Union[bool, str] = False) -> List[QuadBox]:
    """Parse ``x1,y1,...,x4,y4[,confidence][,transcription]`` lines.

    ``scored=True`` requires a numeric confidence in field 9; ``"auto"``
    takes field 9 as a confidence only when it parses as a float in [0, 1].
    Transcription ``###`` marks a don't-care box.
    """
    boxes = []
    for lineno, raw in enumerate(text.lstrip("﻿").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) < 8:
            raise FormatError(f"line {lineno}: expected at least 8 fields, got {len(parts)}")
        try:
            coords = [float(p) for p in parts[:8]]
        except ValueError:
            raise FormatError(f"line {lineno}: non-numeric coordinate in {line!r}") from None
        rest = parts[8:]
        confidence = None
        if scored and rest:
            try:
                c = float(rest[0])
                if not 0.0 <= c <= 1.0:
                    raise ValueError
                confidence = c
                rest = rest[1:]
            except ValueError:
                if scored is True:
                    raise FormatError(f"line {lineno}: bad confidence {rest[0]!r}") from None
        elif scored is True:
            raise FormatError(f"line {lineno}: missing confidence field")
        transcription = ",".join(rest) if rest else None
        ignore = transcription == "###"
        if ignore:
            transcription = None
        try:
            boxes.append(
                QuadBox(
                    np.array(coords).reshape(4, 2),
                    confidence=confidence,
                    ignore_flag=ignore,
                    transcription=transcription,
                )
            )
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
    return boxes


def emit_icdar_boxes(boxes) -> str:
    lines = []
    for b in boxes:
        fields = [_fmt_num(v) for v in b.vertices.ravel()]
        if b.confidence is not None:
            fields.append(repr(float(b.confidence)))
        if b.ignore_flag:
            fields.append("###")
        elif b.transcription is not None:
            fields.append(b.transcription)
        lines.append(",".join(fields))
    return "".join(line + "\n" for line in lines)


def read_icdar_file(path: PathLike, scored: Union[bool, str] = False) -> List[QuadBox]:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        return parse_icdar_boxes(text, scored=scored)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_icdar_file(boxes, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(emit_icdar_boxes(boxes))


# ---------------------------------------------------------------- model files


def encode_model(model) -> bytes:
    spaces = [np.concatenate([np.ravel(p) for p in group]) for group in model.parameter_spaces()]
    for vals in spaces:
        if not np.all(np.isfinite(vals)):
            raise ValueError("model parameters must be finite")
    out = [MODEL_MAGIC, bytes([MODEL_VERSION])]
    out.append(struct.pack("<III", *(v.size for v in spaces)))
    out.extend(v.astype("<f4").tobytes() for v in spaces)
    return b"".join(out)


def decode_model(buf: bytes):
    from textadapt.toymodel import ToyModel

    head = 4 + 1 + 12
    if len(buf) < head:
        raise FormatError(f"byte {len(buf)}: truncated model header")
    if buf[:4] != MODEL_MAGIC:
        raise FormatError(f"byte 0: bad model magic {buf[:4]!r}")
    if buf[4] != MODEL_VERSION:
        raise FormatError(f"byte 4: unsupported model version {buf[4]}")
    counts = struct.unpack_from("<III", buf, 5)
    if len(buf) != head + 4 * sum(counts):
        raise FormatError(
            f"byte {head}: payload is {len(buf) - head} bytes, header declares {4 * sum(counts)}"
        )
    flat = np.frombuffer(buf, dtype="<f4", offset=head).astype(np.float32)
    n_f, n_h, _ = counts
    theta_f = flat[:n_f]
    theta_h = flat[n_f : n_f + n_h]
    theta_d = flat[n_f + n_h :]
    try:
        return ToyModel.from_flat(theta_f, theta_h, theta_d)
    except ValueError as exc:
        raise FormatError(f"byte {head}: {exc}") from None


def save_model(model, path: PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_model(model))


def load_model(path: PathLike):
    with open(path, "rb") as fh:
        return decode_model(fh.read())
