"""Binary PNM (P5 graymap, P6 pixmap) reading and writing, 8-bit only."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .autodiff import Tensor

_WHITESPACE = b" \t\r\n\v\f"


class PNMError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} at byte {offset}")
        self.offset = offset


def _header_tokens(buf: bytes, count: int) -> tuple[list[int], int]:
    """Read ``count`` integer header fields after the magic; return them and the payload offset."""
    pos = 2
    values = []
    while len(values) < count:
        if pos >= len(buf):
            raise PNMError("unexpected end of header", pos)
        ch = buf[pos:pos + 1]
        if ch in _WHITESPACE and ch:
            pos += 1
            continue
        if ch == b"#":
            end = buf.find(b"\n", pos)
            pos = len(buf) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(buf) and buf[pos:pos + 1] not in _WHITESPACE and buf[pos:pos + 1] != b"#":
            pos += 1
        tok = buf[start:pos]
        if not tok.isdigit():
            raise PNMError(f"invalid header field {tok[:16]!r}", start)
        values.append(int(tok))
    if pos >= len(buf) or buf[pos:pos + 1] not in _WHITESPACE:
        raise PNMError("missing whitespace after header", pos)
    return values, pos + 1


def read_pnm_raw(path: str | Path) -> np.ndarray:
    """Raw uint8 samples: [H,W,3] for P6, [H,W] for P5."""
    buf = Path(path).read_bytes()
    return parse_pnm(buf)


def parse_pnm(buf: bytes) -> np.ndarray:
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise PNMError(f"unsupported magic {magic!r}", 0)
    (width, height, maxval), offset = _header_tokens(buf, 3)
    if width < 1 or height < 1:
        raise PNMError("image dimensions must be positive", 2)
    if not 0 < maxval < 256:
        raise PNMError(f"maxval {maxval} not supported (8-bit only)", 2)
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    if len(buf) - offset < need:
        raise PNMError(f"payload needs {need} bytes, found {len(buf) - offset}", offset)
    data = np.frombuffer(buf, dtype=np.uint8, count=need, offset=offset)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return data.reshape(shape).copy()


def format_pnm(raw: np.ndarray) -> bytes:
    raw = np.asarray(raw)
    if raw.dtype != np.uint8:
        raise TypeError("format_pnm expects uint8 samples")
    if raw.ndim == 3 and raw.shape[2] == 3:
        magic = b"P6"
    elif raw.ndim == 2:
        magic = b"P5"
    else:
        raise ValueError(f"cannot store array of shape {raw.shape} as PNM")
    h, w = raw.shape[:2]
    return magic + b"\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(raw).tobytes()


def write_pnm_raw(raw: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(format_pnm(raw))


def load_pnm(path: str | Path) -> Tensor:
    """P6 -> image [3,H,W] in [0,1]; P5 -> binary mask [1,H,W] (value >= 128 is foreground)."""
    raw = read_pnm_raw(path)
    if raw.ndim == 3:
        return Tensor(raw.transpose(2, 0, 1) / 255.0)
    return Tensor((raw >= 128)[None].astype(np.float32))


def to_raw(x, mask: bool | None = None) -> np.ndarray:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if arr.dtype == np.uint8:
        return arr
    if arr.ndim == 3 and arr.shape[0] == 3:
        return np.clip(np.rint(arr.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise ValueError(f"cannot write tensor of shape {arr.shape} as PNM")
    if mask is None:
        mask = bool(np.isin(arr, (0.0, 1.0)).all())
    if mask:
        return np.where(arr >= 0.5, 255, 0).astype(np.uint8)
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


def write_pnm(x, path: str | Path) -> None:
    """Write a [3,H,W] image as P6 or a [1,H,W]/[H,W] map as P5."""
    write_pnm_raw(to_raw(x), path)
