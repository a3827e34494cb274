"""Readers and writers for PLY point clouds, PPM images, PFM depth maps and
JSON pose/intrinsics files.

Malformed input raises :class:`FormatError` whose message names the byte
offset (binary formats) or field (JSON) where parsing failed.
"""

from __future__ import annotations

import json
import os
import re
from typing import Sequence

import numpy as np

from worldmem.core.types import CameraIntrinsics, CameraPose, DepthMap, Image, PointCloud


class FormatError(ValueError):
    """Raised when a file does not conform to its expected format."""


_PLY_DTYPE = np.dtype(
    [
        ("x", "<f4"),
        ("y", "<f4"),
        ("z", "<f4"),
        ("red", "u1"),
        ("green", "u1"),
        ("blue", "u1"),
        ("confidence", "<f4"),
    ]
)
_PLY_PROPS = [
    ("float", "x"),
    ("float", "y"),
    ("float", "z"),
    ("uchar", "red"),
    ("uchar", "green"),
    ("uchar", "blue"),
    ("float", "confidence"),
]


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _write_bytes(path, data: bytes) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(data)


def quantize_colors(colors: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(np.asarray(colors, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


# --------------------------------------------------------------------------- PLY


def encode_ply(cloud: PointCloud) -> bytes:
    n = len(cloud)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property {t} {name}" for t, name in _PLY_PROPS]
    header.append("end_header")
    rec = np.empty(n, dtype=_PLY_DTYPE)
    if n:
        rec["x"], rec["y"], rec["z"] = cloud.positions.T.astype(np.float32)
        q = quantize_colors(cloud.colors)
        rec["red"], rec["green"], rec["blue"] = q.T
        rec["confidence"] = cloud.confidences.astype(np.float32)
    return ("\n".join(header) + "\n").encode("ascii") + rec.tobytes()


def decode_ply(data: bytes) -> PointCloud:
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n"):
        raise FormatError("PLY: bad magic at byte 0 (expected 'ply')")
    if end < 0:
        raise FormatError(f"PLY: header not terminated (no 'end_header' within {len(data)} bytes)")
    body = end + len(b"end_header\n")

    count = None
    props = []
    offset = 4
    for raw in data[4:end].split(b"\n"):
        line = raw.decode("ascii", errors="replace").strip()
        tokens = line.split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            pass
        elif tokens[0] == "format":
            if tokens[1:] != ["binary_little_endian", "1.0"]:
                raise FormatError(f"PLY: unsupported format {line!r} at byte {offset}")
        elif tokens[0] == "element":
            if len(tokens) != 3 or tokens[1] != "vertex" or count is not None:
                raise FormatError(f"PLY: unexpected element declaration {line!r} at byte {offset}")
            try:
                count = int(tokens[2])
            except ValueError:
                raise FormatError(f"PLY: bad vertex count {tokens[2]!r} at byte {offset}") from None
            if count < 0:
                raise FormatError(f"PLY: negative vertex count at byte {offset}")
        elif tokens[0] == "property":
            if len(tokens) != 3:
                raise FormatError(f"PLY: malformed property {line!r} at byte {offset}")
            props.append((tokens[1], tokens[2]))
        else:
            raise FormatError(f"PLY: unexpected header line {line!r} at byte {offset}")
        offset += len(raw) + 1

    if count is None:
        raise FormatError("PLY: missing 'element vertex' declaration")
    if props != _PLY_PROPS:
        raise FormatError(f"PLY: vertex properties {props} do not match the expected layout")

    expected = count * _PLY_DTYPE.itemsize
    available = len(data) - body
    if available < expected:
        whole = available // _PLY_DTYPE.itemsize
        raise FormatError(
            f"PLY: truncated at byte {body + whole * _PLY_DTYPE.itemsize}: header declares "
            f"{count} vertices, data holds {whole}"
        )
    if available > expected:
        raise FormatError(
            f"PLY: {available - expected} trailing bytes at byte {body + expected}; "
            f"element count {count} inconsistent with data size"
        )
    rec = np.frombuffer(data, dtype=_PLY_DTYPE, count=count, offset=body)
    pos = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    conf = rec["confidence"].astype(np.float64)
    bad = ~np.all(np.isfinite(pos), axis=1) | ~np.isfinite(conf) | (conf < 0)
    if bad.any():
        i = int(np.argmax(bad))
        raise FormatError(
            f"PLY: vertex {i} at byte {body + i * _PLY_DTYPE.itemsize} has a non-finite "
            "position or invalid confidence"
        )
    col = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1) / 255.0
    return PointCloud(pos, col, conf)


def write_ply(path, cloud: PointCloud) -> None:
    _write_bytes(path, encode_ply(cloud))


def read_ply(path) -> PointCloud:
    return decode_ply(_read_bytes(path))


# ------------------------------------------------------------------- PPM / PFM

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _header_tokens(data: bytes, n: int, fmt: str) -> tuple[list[bytes], int]:
    """Pull ``n`` whitespace-separated header tokens; returns tokens and body offset."""
    pos = 0
    tokens = []
    for _ in range(n):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise FormatError(f"{fmt}: truncated header at byte {pos}")
        tokens.append(m.group(1))
        pos = m.end()
    if pos >= len(data) or data[pos : pos + 1] not in (b"\n", b" ", b"\r", b"\t"):
        raise FormatError(f"{fmt}: missing whitespace after header at byte {pos}")
    return tokens, pos + 1


def _positive_int(tok: bytes, fmt: str, what: str, data: bytes) -> int:
    try:
        v = int(tok)
    except ValueError:
        v = 0
    if v < 1:
        raise FormatError(f"{fmt}: invalid {what} {tok!r} at byte {data.find(tok)}")
    return v


def encode_ppm(pixels: np.ndarray) -> bytes:
    px = np.asarray(pixels)
    h, w = px.shape[:2]
    q = quantize_colors(px) if px.dtype != np.uint8 else px
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(q).tobytes()


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode a P6 image to a (H, W, 3) uint8 array."""
    if not data.startswith(b"P6"):
        raise FormatError("PPM: bad magic at byte 0 (expected 'P6')")
    (magic, w, h, maxval), body = _header_tokens(data, 4, "PPM")
    w = _positive_int(w, "PPM", "width", data)
    h = _positive_int(h, "PPM", "height", data)
    if maxval != b"255":
        raise FormatError(f"PPM: unsupported maxval {maxval!r} (only 255)")
    need = w * h * 3
    if len(data) - body < need:
        raise FormatError(
            f"PPM: truncated at byte {len(data)}: expected {need} pixel bytes from byte {body}"
        )
    if len(data) - body > need:
        raise FormatError(f"PPM: trailing data at byte {body + need}")
    return np.frombuffer(data, dtype=np.uint8, count=need, offset=body).reshape(h, w, 3).copy()


def write_image(path, image: Image) -> None:
    _write_bytes(path, encode_ppm(image.pixels))


def read_image(path) -> Image:
    return Image(decode_ppm(_read_bytes(path)) / 255.0)


def write_mask(path, mask: np.ndarray) -> None:
    """White where ``mask`` is true, black elsewhere."""
    m = np.asarray(mask, dtype=bool)
    _write_bytes(path, encode_ppm(np.repeat(m[:, :, None], 3, axis=2).astype(np.uint8) * 255))


def read_mask(path) -> np.ndarray:
    return decode_ppm(_read_bytes(path))[:, :, 0] >= 128


def encode_pfm(depth: np.ndarray) -> bytes:
    d = np.asarray(depth, dtype="<f4")
    h, w = d.shape
    return f"Pf\n{w} {h}\n-1.0\n".encode("ascii") + np.ascontiguousarray(d[::-1]).tobytes()


def decode_pfm(data: bytes) -> np.ndarray:
    if not data.startswith(b"Pf"):
        if data.startswith(b"PF"):
            raise FormatError("PFM: colour PFM ('PF') at byte 0 not supported, expected 'Pf'")
        raise FormatError("PFM: bad magic at byte 0 (expected 'Pf')")
    (magic, w, h, scale), body = _header_tokens(data, 4, "PFM")
    w = _positive_int(w, "PFM", "width", data)
    h = _positive_int(h, "PFM", "height", data)
    try:
        s = float(scale)
    except ValueError:
        s = 0.0
    if s == 0.0 or not np.isfinite(s):
        raise FormatError(f"PFM: invalid scale {scale!r} at byte {data.find(scale)}")
    need = w * h * 4
    if len(data) - body < need:
        raise FormatError(
            f"PFM: truncated at byte {len(data)}: expected {need} sample bytes from byte {body}"
        )
    if len(data) - body > need:
        raise FormatError(f"PFM: trailing data at byte {body + need}")
    dt = "<f4" if s < 0 else ">f4"
    arr = np.frombuffer(data, dtype=dt, count=w * h, offset=body).reshape(h, w)
    return arr[::-1].astype(np.float32)


def write_depth(path, depth: DepthMap) -> None:
    _write_bytes(path, encode_pfm(depth.depths))


def read_depth(path) -> DepthMap:
    return DepthMap(decode_pfm(_read_bytes(path)).astype(np.float64))


# ------------------------------------------------------------------------ JSON


def pose_to_dict(pose: CameraPose, index: int) -> dict:
    return {
        "index": int(index),
        "rotation": [float(x) for x in pose.rotation.reshape(-1)],
        "translation": [float(x) for x in pose.translation],
    }


def pose_from_dict(d, where: str = "pose") -> tuple[int, CameraPose]:
    if not isinstance(d, dict):
        raise FormatError(f"{where}: expected an object")
    for key, n in (("rotation", 9), ("translation", 3)):
        v = d.get(key)
        if not isinstance(v, list) or len(v) != n:
            raise FormatError(f"{where}.{key}: expected a list of {n} numbers")
        if not all(isinstance(x, (int, float)) and np.isfinite(x) for x in v):
            raise FormatError(f"{where}.{key}: values must be finite numbers")
    if not isinstance(d.get("index"), int):
        raise FormatError(f"{where}.index: expected an integer")
    try:
        pose = CameraPose(np.array(d["rotation"]).reshape(3, 3), np.array(d["translation"]))
    except ValueError as exc:
        raise FormatError(f"{where}.rotation: {exc}") from None
    return d["index"], pose


def dump_trajectory(poses: Sequence[CameraPose], start_index: int = 0) -> list[dict]:
    return [pose_to_dict(p, start_index + i) for i, p in enumerate(poses)]


def load_trajectory(items) -> list[CameraPose]:
    if not isinstance(items, list):
        raise FormatError("trajectory: expected a JSON array")
    out = []
    for i, item in enumerate(items):
        _, pose = pose_from_dict(item, where=f"trajectory[{i}]")
        out.append(pose)
    return out


def write_json(path, obj) -> None:
    _write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at byte {exc.pos}: {exc.msg}") from None


def write_trajectory(path, poses: Sequence[CameraPose], start_index: int = 0) -> None:
    write_json(path, dump_trajectory(poses, start_index))


def read_trajectory(path) -> list[CameraPose]:
    return load_trajectory(read_json(path))


def write_intrinsics(path, intr: CameraIntrinsics) -> None:
    write_json(path, intr.to_dict())


def read_intrinsics(path) -> CameraIntrinsics:
    d = read_json(path)
    if not isinstance(d, dict):
        raise FormatError(f"{path}: intrinsics must be a JSON object")
    try:
        return CameraIntrinsics.from_dict(d)
    except (ValueError, TypeError) as exc:
        raise FormatError(f"{path}: {exc}") from None
