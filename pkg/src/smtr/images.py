"""Grayscale image container, the aspect-ratio input policy, and file IO."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class ImageTensor:
    """Single-channel float image, values in [0, 1], row-major [H, W]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim == 3 and px.shape[0] == 1:
            px = px[0]
        if px.ndim != 2:
            raise ShapeError(f"expected a 2-D grayscale image, got shape {px.shape}")
        if px.shape[0] < 8 or px.shape[1] < 4:
            raise ShapeError(f"image {px.shape} too small")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def resize_nearest(img: ImageTensor, height: int, width: int) -> ImageTensor:
    """Nearest-neighbor resize; keeps binary renders crisp."""
    ys = np.minimum((np.arange(height) * img.height) // height, img.height - 1)
    xs = np.minimum((np.arange(width) * img.width) // width, img.width - 1)
    return ImageTensor(img.pixels[np.ix_(ys, xs)])


def prepare_for_model(img: ImageTensor, train: bool = False, height: int = 32,
                      base_width: int = 128, max_train_width: int = 384) -> ImageTensor:
    """Aspect-ratio policy applied before encoding.

    Narrow images (aspect < base_width/height) are resized to height x
    base_width; wider ones keep a proportional width, capped during training.
    The output width is padded up to a multiple of 4 so the encoder's
    downsampling schedule holds.
    """
    if img.height != height:
        img = resize_nearest(img, height, max(4, round(img.width * height / img.height)))
    if img.width < base_width:  # aspect below base_width/height
        img = resize_nearest(img, height, base_width)
    elif train and img.width > max_train_width:
        img = resize_nearest(img, height, max_train_width)
    pad = (-img.width) % 4
    if pad:
        img = ImageTensor(np.pad(img.pixels, ((0, 0), (0, pad))))
    return img


def pad_width(img: ImageTensor, width: int) -> ImageTensor:
    """Right-pad with background (zeros) to the target width."""
    if img.width > width:
        raise ShapeError(f"cannot pad width {img.width} down to {width}")
    if img.width == width:
        return img
    return ImageTensor(np.pad(img.pixels, ((0, 0), (0, width - img.width))))


def write_pgm(img: ImageTensor, path) -> None:
    data = np.clip(img.pixels * 255.0, 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.width} {img.height}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path) -> ImageTensor:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise ShapeError(f"not a binary PGM file: magic {magic!r}")
        fields: list[int] = []
        while len(fields) < 3:
            line = f.readline()
            if not line:
                raise ShapeError("truncated PGM header")
            if line.startswith(b"#"):
                continue
            fields.extend(int(t) for t in line.split())
        w, h, maxval = fields[:3]
        raw = np.frombuffer(f.read(w * h), dtype=np.uint8).reshape(h, w)
    return ImageTensor(raw.astype(np.float32) / float(maxval))


def read_image(path) -> ImageTensor:
    """Load a PGM or PNG file as a grayscale ImageTensor."""
    p = str(path)
    if p.endswith(".pgm"):
        return read_pgm(p)
    from PIL import Image  # optional dependency, only needed for PNG

    arr = np.asarray(Image.open(p).convert("L"), dtype=np.float32) / 255.0
    return ImageTensor(arr)


def write_png(img: ImageTensor, path) -> None:
    from PIL import Image

    data = np.clip(img.pixels * 255.0, 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="L").save(str(path))
