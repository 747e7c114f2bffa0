"""Image I/O and boundary padding.

PPM (P6, maxval 255) is always supported; PNG works when Pillow is
installed.  Pixels map to floats as value / 255 exactly, so the 8-bit ->
float -> 8-bit round trip is the identity.
"""

from __future__ import annotations

import numpy as np


class ImageError(RuntimeError):
    pass


def read_image(path) -> np.ndarray:
    """Load an image as (H, W, 3) uint8."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(2)
            fh.seek(0)
            if head == b"P6":
                return _read_ppm(fh)
            data = fh.read()
    except OSError as exc:
        raise ImageError(f"cannot read {path}: {exc}") from exc
    try:
        from PIL import Image
    except ImportError:
        raise ImageError(
            f"{path} is not a PPM (P6) file and Pillow is not installed"
        ) from None
    import io

    try:
        img = Image.open(io.BytesIO(data)).convert("RGB")
    except Exception as exc:
        raise ImageError(f"cannot decode {path}: {exc}") from exc
    return np.asarray(img, dtype=np.uint8)


def write_image(path, pixels: np.ndarray) -> None:
    """Write (H, W, 3) uint8 pixels; format chosen by extension (.ppm or PNG)."""
    path = str(path)
    if path.lower().endswith((".ppm", ".pnm")):
        _write_ppm(path, pixels)
        return
    try:
        from PIL import Image
    except ImportError:
        raise ImageError(
            f"writing {path} requires Pillow; use a .ppm extension instead"
        ) from None
    Image.fromarray(pixels, mode="RGB").save(path)


def _read_ppm(fh) -> np.ndarray:
    def token():
        tok = b""
        while True:
            ch = fh.read(1)
            if not ch:
                raise ImageError("truncated PPM header")
            if ch == b"#":
                while ch not in (b"\n", b""):
                    ch = fh.read(1)
                continue
            if ch.isspace():
                if tok:
                    return tok
                continue
            tok += ch

    if token() != b"P6":
        raise ImageError("not a P6 PPM file")
    w, h, maxval = int(token()), int(token()), int(token())
    if maxval != 255:
        raise ImageError(f"unsupported PPM maxval {maxval}")
    data = fh.read(w * h * 3)
    if len(data) != w * h * 3:
        raise ImageError("truncated PPM pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)


def _write_ppm(path, pixels: np.ndarray) -> None:
    h, w = pixels.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())


def to_float(pixels: np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8 -> (1, 3, H, W) float in [0, 1] (exactly value/255)."""
    return (pixels.astype(np.float64) / 255.0).transpose(2, 0, 1)[None]


def from_float(x: np.ndarray) -> np.ndarray:
    """(1, 3, H, W) float -> (H, W, 3) uint8 with clamping."""
    arr = np.clip(np.rint(x[0] * 255.0), 0, 255).astype(np.uint8)
    return arr.transpose(1, 2, 0)


def _pad_amounts(h: int, w: int, multiple: int) -> tuple:
    return (-h % multiple, -w % multiple)


def pad_reflect(x: np.ndarray, multiple: int = 64) -> tuple:
    """Reflection-pad (1, 3, H, W) right/bottom to a size multiple.

    Returns (padded, (H, W)).  Reflection is applied in chunks so images
    smaller than the multiple still pad correctly.
    """
    h, w = x.shape[2], x.shape[3]
    ph, pw = _pad_amounts(h, w, multiple)
    out = x
    while ph > 0 or pw > 0:
        dh = min(ph, out.shape[2] - 1)
        dw = min(pw, out.shape[3] - 1)
        if dh == 0 and ph > 0:
            dh = ph if out.shape[2] > 1 else 0
        out = np.pad(out, ((0, 0), (0, 0), (0, dh), (0, dw)), mode="reflect")
        ph -= dh
        pw -= dw
        if dh == 0 and dw == 0:
            out = np.pad(
                out, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="edge"
            )
            break
    return out, (h, w)


def crop_back(x: np.ndarray, orig_hw: tuple) -> np.ndarray:
    """Undo pad_reflect exactly."""
    h, w = orig_hw
    return x[:, :, :h, :w]
