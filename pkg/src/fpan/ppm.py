"""Binary PPM (P6, maxval 255) image files."""

from __future__ import annotations

import numpy as np

from .errors import PpmFormatError


def write_ppm(path, image: np.ndarray):
    """Write an (h, w, 3) image; floats are taken as [0, 1] and rounded."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise PpmFormatError(f"need an (h, w, 3) image, got {arr.shape}")
    if arr.dtype != np.uint8:
        arr = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def _tokens(fh):
    """Yield whitespace-separated header tokens, skipping # comments."""
    while True:
        ch = fh.read(1)
        if not ch:
            raise PpmFormatError("truncated ppm header")
        if ch.isspace():
            continue
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = fh.read(1)
            continue
        tok = ch
        while True:
            ch = fh.read(1)
            if not ch or ch.isspace() or ch == b"#":
                if ch == b"#":
                    while ch not in (b"\n", b""):
                        ch = fh.read(1)
                break
            tok += ch
        yield tok


def read_ppm(path) -> np.ndarray:
    """Read a P6 file into float32 (h, w, 3) scaled to [0, 1]."""
    with open(path, "rb") as fh:
        toks = _tokens(fh)
        magic = next(toks)
        if magic != b"P6":
            raise PpmFormatError(f"bad magic {magic!r} in {path}, expected P6")
        try:
            w = int(next(toks))
            h = int(next(toks))
            maxval = int(next(toks))
        except ValueError as e:
            raise PpmFormatError(f"non-numeric ppm header in {path}") from e
        if w < 1 or h < 1:
            raise PpmFormatError(f"bad dimensions {w}x{h} in {path}")
        if maxval != 255:
            raise PpmFormatError(f"unsupported maxval {maxval} in {path}")
        data = fh.read(w * h * 3)
        if len(data) != w * h * 3:
            raise PpmFormatError(f"truncated pixel data in {path}")
        if fh.read(1):
            raise PpmFormatError(f"trailing bytes in {path}")
    arr = np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)
    return arr.astype(np.float32) / 255.0
