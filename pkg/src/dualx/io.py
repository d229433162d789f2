"""Checkpoints, frame-sequence clips (PPM P6 and PNG) and provenance records.

Checkpoint layout (text header, then binary payload)::

    DXCKPT v1
    config <ModelConfig as one-line JSON>
    meta <one-line JSON>
    tensors <count>
    <name> <extent,extent,...> <offset> <nbytes>     (one line per tensor)
    end
    <concatenated DXTENSOR dumps; offsets are relative to the payload start>
"""
from __future__ import annotations

import hashlib
import json
import re
import struct
import zlib
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import InvalidConfigError, InvalidShapeError, UnsupportedFormatError
from .model import ModelConfig, check_params
from .tensor import Tensor, dumps_tensor, loads_tensor

CKPT_MAGIC = "DXCKPT v1"
FRAME_DIGITS = 8
PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


# ---------------------------------------------------------------- provenance


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    """sha256 of the canonical JSON encoding."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def file_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def clip_hash(clip: np.ndarray) -> str:
    arr = np.ascontiguousarray(clip)
    return hashlib.sha256(str(arr.dtype).encode() + str(arr.shape).encode() + arr.tobytes()).hexdigest()


def write_record(path: str | Path, record: Mapping) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path


def read_record(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path: str | Path, cfg: ModelConfig, params: Mapping[str, Tensor | np.ndarray],
                    meta: Mapping | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blobs, lines, offset = [], [], 0
    for name, value in params.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        if re.search(r"\s", name):
            raise InvalidConfigError(f"tensor name {name!r} contains whitespace")
        blob = dumps_tensor(arr)
        lines.append(f"{name} {','.join(str(s) for s in arr.shape)} {offset} {len(blob)}")
        blobs.append(blob)
        offset += len(blob)
    header = [CKPT_MAGIC, "config " + canonical_json(cfg.to_dict()), "meta " + canonical_json(dict(meta or {})),
              f"tensors {len(lines)}", *lines, "end"]
    path.write_bytes(("\n".join(header) + "\n").encode() + b"".join(blobs))
    return path


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, "OrderedDict[str, Tensor]", dict]:
    buf = Path(path).read_bytes()
    pos = 0

    def line() -> str:
        nonlocal pos
        end = buf.index(b"\n", pos)
        text = buf[pos:end].decode()
        pos = end + 1
        return text

    try:
        if line() != CKPT_MAGIC:
            raise UnsupportedFormatError(f"{path}: not a {CKPT_MAGIC} checkpoint")
        cfg = ModelConfig.from_dict(json.loads(line().split(" ", 1)[1]))
        meta = json.loads(line().split(" ", 1)[1])
        count = int(line().split()[1])
        table = [line().split() for _ in range(count)]
        if line() != "end":
            raise UnsupportedFormatError(f"{path}: malformed checkpoint header")
    except (ValueError, IndexError) as exc:
        raise UnsupportedFormatError(f"{path}: malformed checkpoint header ({exc})") from exc
    params: OrderedDict[str, Tensor] = OrderedDict()
    for name, shape_s, off_s, size_s in table:
        shape = tuple(int(s) for s in shape_s.split(",") if s)
        arr, end = loads_tensor(buf, pos + int(off_s))
        if arr.shape != shape or end - pos - int(off_s) != int(size_s):
            raise UnsupportedFormatError(f"{path}: tensor {name} does not match its table entry")
        params[name] = Tensor(arr, requires_grad=True, dtype=arr.dtype)
    check_params(cfg, params)
    return cfg, params, meta


# ---------------------------------------------------------------- PPM


def encode_ppm(frame: np.ndarray) -> bytes:
    """(H, W, 3) uint8 -> binary P6."""
    h, w, _ = frame.shape
    return f"P6\n{w} {h}\n255\n".encode() + np.ascontiguousarray(frame, dtype=np.uint8).tobytes()


def decode_ppm(buf: bytes) -> np.ndarray:
    tokens, pos = [], 2
    if buf[:2] != b"P6":
        raise UnsupportedFormatError("only binary PPM (P6) is supported")
    while len(tokens) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(buf[start:pos]))
    w, h, maxval = tokens
    if maxval != 255:
        raise UnsupportedFormatError(f"PPM maxval {maxval} unsupported (8-bit only)")
    pos += 1
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h * 3, offset=pos)
    return data.reshape(h, w, 3).copy()


# ---------------------------------------------------------------- PNG


def _chunk(kind: bytes, data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + kind + data + struct.pack(">I", zlib.crc32(kind + data) & 0xFFFFFFFF)


def encode_png(frame: np.ndarray) -> bytes:
    """(H, W, 3) uint8 -> 8-bit RGB, non-interlaced, filter type 0 on every row."""
    h, w, _ = frame.shape
    rows = np.concatenate([np.zeros((h, 1), np.uint8), np.ascontiguousarray(frame, np.uint8).reshape(h, w * 3)], axis=1)
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    return PNG_SIGNATURE + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", zlib.compress(rows.tobytes(), 6)) + _chunk(b"IEND", b"")


def _unfilter(raw: np.ndarray, h: int, stride: int, bpp: int) -> np.ndarray:
    out = np.zeros((h, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.int32)
    for y in range(h):
        ftype = raw[y, 0]
        line = raw[y, 1:].astype(np.int32)
        if ftype == 0:
            cur = line
        elif ftype == 1:
            cur = line.copy()
            for i in range(bpp, stride):
                cur[i] = (cur[i] + cur[i - bpp]) & 0xFF
        elif ftype == 2:
            cur = (line + prev) & 0xFF
        elif ftype == 3:
            cur = line.copy()
            for i in range(stride):
                left = cur[i - bpp] if i >= bpp else 0
                cur[i] = (cur[i] + ((left + prev[i]) >> 1)) & 0xFF
        elif ftype == 4:
            cur = line.copy()
            for i in range(stride):
                a = cur[i - bpp] if i >= bpp else 0
                b = prev[i]
                c = prev[i - bpp] if i >= bpp else 0
                p = a + b - c
                pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
                pred = a if pa <= pb and pa <= pc else (b if pb <= pc else c)
                cur[i] = (cur[i] + pred) & 0xFF
        else:
            raise UnsupportedFormatError(f"unknown PNG filter type {ftype}")
        out[y] = cur
        prev = cur
    return out


def decode_png(buf: bytes) -> np.ndarray:
    """Baseline decoder for 8-bit RGB non-interlaced PNG."""
    if buf[:8] != PNG_SIGNATURE:
        raise UnsupportedFormatError("not a PNG file")
    pos, idat, header = 8, [], None
    while pos < len(buf):
        (length,) = struct.unpack(">I", buf[pos:pos + 4])
        kind = buf[pos + 4:pos + 8]
        data = buf[pos + 8:pos + 8 + length]
        pos += 12 + length
        if kind == b"IHDR":
            header = struct.unpack(">IIBBBBB", data)
        elif kind == b"IDAT":
            idat.append(data)
        elif kind == b"IEND":
            break
    if header is None:
        raise UnsupportedFormatError("PNG without IHDR")
    w, h, depth, color, _, _, interlace = header
    if depth != 8:
        raise UnsupportedFormatError(f"PNG bit depth {depth} unsupported (8-bit only)")
    if color != 2:
        raise UnsupportedFormatError(f"PNG color type {color} unsupported (RGB only)")
    if interlace:
        raise UnsupportedFormatError("interlaced PNG unsupported")
    stride = w * 3
    raw = np.frombuffer(zlib.decompress(b"".join(idat)), dtype=np.uint8).reshape(h, stride + 1)
    return _unfilter(raw, h, stride, 3).reshape(h, w, 3)


# ---------------------------------------------------------------- clips

_CODECS = {".ppm": (encode_ppm, decode_ppm), ".png": (encode_png, decode_png)}


def quantize(clip: np.ndarray) -> np.ndarray:
    """[0, 1] reals -> uint8 with clamping and round-half-even."""
    return np.rint(np.clip(np.asarray(clip, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_clip(directory: str | Path, clip: np.ndarray, fmt: str = "png") -> list[Path]:
    """Write a (3, N, H, W) clip as numbered frames 00000000.<fmt>, ...; values clamped to [0, 1]."""
    ext = "." + fmt.lower().lstrip(".")
    if ext not in _CODECS:
        raise UnsupportedFormatError(f"unsupported frame format {fmt!r}")
    clip = np.asarray(clip)
    if clip.ndim != 4 or clip.shape[0] != 3:
        raise InvalidShapeError(f"clip must be (3, N, H, W), got {clip.shape}")
    data = clip if clip.dtype == np.uint8 else quantize(clip)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    encode = _CODECS[ext][0]
    paths = []
    for i in range(data.shape[1]):
        p = directory / f"{i:0{FRAME_DIGITS}d}{ext}"
        p.write_bytes(encode(np.transpose(data[:, i], (1, 2, 0))))
        paths.append(p)
    return paths


def list_frames(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise InvalidConfigError(f"clip directory {directory} does not exist")
    frames = sorted(p for p in directory.iterdir() if p.suffix.lower() in _CODECS and p.stem.isdigit())
    if not frames:
        raise InvalidShapeError(f"no numbered .png/.ppm frames in {directory}")
    return frames


def read_clip_uint8(directory: str | Path) -> np.ndarray:
    frames = []
    for p in list_frames(directory):
        frames.append(_CODECS[p.suffix.lower()][1](p.read_bytes()))
        if frames[-1].shape != frames[0].shape:
            raise InvalidShapeError(f"{p.name}: frame extents {frames[-1].shape[:2]} differ from {frames[0].shape[:2]}")
    return np.transpose(np.stack(frames), (3, 0, 1, 2))


def read_clip(directory: str | Path) -> np.ndarray:
    """(3, N, H, W) float64 clip in [0, 1]."""
    return read_clip_uint8(directory).astype(np.float64) / 255.0
