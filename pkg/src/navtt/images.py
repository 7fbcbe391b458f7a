"""Grayscale image export and resizing helpers."""

import numpy as np


def write_pgm(img: np.ndarray, path) -> None:
    """Binary PGM (P5), 8-bit grayscale."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"expected 2D grayscale image, got {img.shape}")
    img = img.astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fp:
        fp.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fp.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fp:
        data = fp.read()
    if not data.startswith(b"P5"):
        raise ValueError("not a binary PGM file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":  # comment line
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval > 255:
        raise ValueError("16-bit PGM not supported")
    img = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return img.reshape(h, w).copy()


def write_png(img: np.ndarray, path) -> None:
    from PIL import Image

    img = np.asarray(img)
    Image.fromarray(img.astype(np.uint8), mode="L").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"))


def png_bytes(img: np.ndarray) -> bytes:
    """PNG-encode an 8-bit grayscale image in memory."""
    import io

    from PIL import Image

    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"expected 2D grayscale image, got {img.shape}")
    buf = io.BytesIO()
    Image.fromarray(img.astype(np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with corner-aligned sampling; returns float64."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    ys = np.linspace(0.0, h - 1.0, out_h)
    xs = np.linspace(0.0, w - 1.0, out_w)
    y0 = np.floor(ys).astype(np.int64).clip(0, h - 2) if h > 1 else np.zeros(out_h, np.int64)
    x0 = np.floor(xs).astype(np.int64).clip(0, w - 2) if w > 1 else np.zeros(out_w, np.int64)
    fy = (ys - y0) if h > 1 else np.zeros(out_h)
    fx = (xs - x0) if w > 1 else np.zeros(out_w)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    a = img[np.ix_(y0, x0)]
    b = img[np.ix_(y0, x1)]
    c = img[np.ix_(y1, x0)]
    d = img[np.ix_(y1, x1)]
    top = a + (b - a) * fx[None, :]
    bot = c + (d - c) * fx[None, :]
    return top + (bot - top) * fy[:, None]
