"""Image loading and the VTBT bit-exact tensor container.

Encrypted images are real-valued and must round trip exactly (the cipher's
inverse only holds without quantization), so they are persisted as raw
float64 blobs rather than 8-bit images.  ``export_visualization`` is the
one deliberately lossy path: it maps a tensor affinely onto 0..255 to
produce a viewable PNG.

Single-tensor files ("VTBT"):
    magic "VTBT" | version u32 | dtype u32 (1 = float64) | ndim u32 |
    dims i64 each | payload little-endian float64

Multi-tensor model containers ("VTBM"):
    magic "VTBM" | version u32 | count u32 | per blob:
    name_len u32 | name utf-8 | dtype u32 | ndim u32 | dims | payload
Blobs are written in ascending name order so equal contents give equal
bytes.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

MAGIC = b"VTBT"
MAGIC_MULTI = b"VTBM"
VERSION = 1
DTYPE_F64 = 1

PLAIN = "plain"
ENCRYPTED = "encrypted"


class FormatError(ValueError):
    """Raised for malformed or unsupported files."""


@dataclass(frozen=True)
class ImageTensor:
    """h x w x c float64 image; ``plain`` means every value is in [0, 1]."""

    data: np.ndarray
    range_tag: str = PLAIN

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError("image data must be (h, w, c)")
        if self.data.size == 0:
            raise ValueError("zero-area image")
        if self.range_tag not in (PLAIN, ENCRYPTED):
            raise ValueError(f"bad range_tag {self.range_tag!r}")
        if self.range_tag == PLAIN:
            if self.data.min() < 0.0 or self.data.max() > 1.0:
                raise ValueError("plain image values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class TensorBlob:
    dims: tuple
    payload: np.ndarray  # float64, flat, length == prod(dims)
    name: str = ""

    def __post_init__(self):
        if len(self.dims) == 0 or any(d < 1 for d in self.dims):
            raise ValueError("dims must be nonempty with extents >= 1")
        if self.payload.dtype != np.float64 or self.payload.ndim != 1:
            raise ValueError("payload must be a flat float64 array")
        if self.payload.size != int(np.prod(self.dims)):
            raise ValueError("payload length does not match dims")

    @classmethod
    def from_array(cls, arr: np.ndarray, name: str = "") -> "TensorBlob":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(dims=tuple(arr.shape), payload=arr.reshape(-1).copy(), name=name)

    def to_array(self) -> np.ndarray:
        return self.payload.reshape(self.dims).copy()

    def __eq__(self, other) -> bool:
        if not isinstance(other, TensorBlob):
            return NotImplemented
        return (
            self.name == other.name
            and self.dims == other.dims
            and self.payload.tobytes() == other.payload.tobytes()
        )


def atomic_write(path: str, data: bytes) -> None:
    """Write via temp file + rename so readers never see partial files."""
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def _encode_body(blob: TensorBlob) -> bytes:
    parts = [struct.pack("<II", DTYPE_F64, len(blob.dims))]
    for d in blob.dims:
        parts.append(struct.pack("<q", d))
    parts.append(blob.payload.astype("<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def i64(self) -> int:
        return struct.unpack("<q", self.take(8))[0]


def _decode_body(r: _Reader, name: str = "") -> TensorBlob:
    dtype = r.u32()
    if dtype != DTYPE_F64:
        raise FormatError(f"{r.path}: unsupported dtype code {dtype}")
    ndim = r.u32()
    dims = tuple(r.i64() for _ in range(ndim))
    if ndim == 0 or any(d < 1 for d in dims):
        raise FormatError(f"{r.path}: bad dims {dims}")
    count = int(np.prod(dims))
    payload = np.frombuffer(r.take(count * 8), dtype="<f8").astype(np.float64)
    return TensorBlob(dims=dims, payload=payload, name=name)


def save_tensor(blob: TensorBlob, path: str) -> None:
    data = MAGIC + struct.pack("<I", VERSION) + _encode_body(blob)
    atomic_write(path, data)


def load_tensor(path: str) -> TensorBlob:
    with open(path, "rb") as f:
        raw = f.read()
    r = _Reader(raw, path)
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: bad magic")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    blob = _decode_body(r)
    if r.pos != len(raw):
        raise FormatError(f"{path}: trailing bytes")
    return blob


def save_blobs(blobs: dict, path: str) -> None:
    """Write a named multi-tensor container (model weights)."""
    parts = [MAGIC_MULTI, struct.pack("<II", VERSION, len(blobs))]
    for name in sorted(blobs):
        enc = name.encode("utf-8")
        parts.append(struct.pack("<I", len(enc)))
        parts.append(enc)
        parts.append(_encode_body(TensorBlob.from_array(blobs[name], name=name)))
    atomic_write(path, b"".join(parts))


def load_blobs(path: str) -> dict:
    with open(path, "rb") as f:
        raw = f.read()
    r = _Reader(raw, path)
    if r.take(4) != MAGIC_MULTI:
        raise FormatError(f"{path}: bad magic")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    count = r.u32()
    out = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        out[name] = _decode_body(r, name=name).to_array()
    if r.pos != len(raw):
        raise FormatError(f"{path}: trailing bytes")
    return out


def _load_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(b"P6"):
        raise FormatError(f"{path}: not a P6 PPM")
    # header: P6 <w> <h> <maxval>, '#' comments allowed, then one whitespace
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PPM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PPM supported (maxval {maxval})")
    if w < 1 or h < 1:
        raise FormatError(f"{path}: zero-area image")
    pixels = raw[pos : pos + w * h * 3]
    if len(pixels) < w * h * 3:
        raise FormatError(f"{path}: truncated PPM payload")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3)


def load_image(path: str) -> ImageTensor:
    """Load an 8-bit PNG or binary PPM (P6), scaled into [0, 1]."""
    lower = path.lower()
    if lower.endswith(".ppm"):
        arr8 = _load_ppm(path)
    else:
        try:
            img = Image.open(path)
        except Exception as exc:
            raise FormatError(f"{path}: unreadable image ({exc})") from exc
        if img.format not in ("PNG", "PPM"):
            raise FormatError(f"{path}: unsupported format {img.format}")
        if img.mode == "L":
            arr8 = np.asarray(img, dtype=np.uint8)[:, :, None]
        elif img.mode in ("RGB", "RGBA", "P", "LA", "1", "I;16"):
            if img.mode != "RGB":
                img = img.convert("RGB")
            arr8 = np.asarray(img, dtype=np.uint8)
        else:
            raise FormatError(f"{path}: unsupported mode {img.mode}")
    if arr8.shape[0] == 0 or arr8.shape[1] == 0:
        raise FormatError(f"{path}: zero-area image")
    return ImageTensor(data=arr8.astype(np.float64) / 255.0, range_tag=PLAIN)


def export_visualization(img: ImageTensor, path: str) -> None:
    """Affinely map tensor range onto 0..255 and write a PNG.

    Lossy by construction; never feed the output back into the cipher
    pipeline.  Plain images use the fixed [0, 1] range (so an 8-bit round
    trip is exact); encrypted ones use their own [min, max].  A constant
    encrypted tensor maps to mid-gray (128).
    """
    if img.range_tag == PLAIN:
        lo, hi = 0.0, 1.0
    else:
        lo = float(img.data.min())
        hi = float(img.data.max())
    if hi == lo:
        arr8 = np.full(img.data.shape, 128, dtype=np.uint8)
    else:
        scaled = (img.data - lo) / (hi - lo) * 255.0
        arr8 = np.rint(scaled).clip(0, 255).astype(np.uint8)
    if arr8.shape[2] == 1:
        pil = Image.fromarray(arr8[:, :, 0], mode="L")
    elif arr8.shape[2] == 3:
        pil = Image.fromarray(arr8, mode="RGB")
    else:
        raise ValueError(f"cannot visualize {arr8.shape[2]}-channel image")
    tmp = f"{path}.tmp.{os.getpid()}"
    pil.save(tmp, format="PNG")
    os.replace(tmp, path)


def image_to_blob(img: ImageTensor, name: str = "image") -> TensorBlob:
    return TensorBlob.from_array(img.data, name=name)


def blob_to_image(blob: TensorBlob, range_tag: str) -> ImageTensor:
    if len(blob.dims) != 3:
        raise FormatError("image blob must have 3 dims (h, w, c)")
    return ImageTensor(data=blob.to_array(), range_tag=range_tag)
