import io
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage


@dataclass(frozen=True, eq=False)
class Image:
    """RGB image with float64 samples in [0, 1], shape (height, width, 3)."""
    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 3 or samples.shape[2] != 3:
            raise ValueError(f"image samples must have shape (h, w, 3), got {samples.shape}")
        if samples.shape[0] < 1 or samples.shape[1] < 1:
            raise ValueError("image must have at least one pixel")
        if not np.all(np.isfinite(samples)) or samples.min() < 0.0 or samples.max() > 1.0:
            raise ValueError("image samples must be finite and within [0, 1]")
        object.__setattr__(self, "samples", samples)

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return np.array_equal(self.samples, other.samples)

    def to_uint8(self) -> np.ndarray:
        return np.round(self.samples * 255.0).astype(np.uint8)

    @classmethod
    def from_uint8(cls, array: np.ndarray) -> "Image":
        return cls(np.asarray(array, dtype=np.float64) / 255.0)

    @classmethod
    def solid(cls, width: int, height: int, rgb=(0.5, 0.5, 0.5)) -> "Image":
        samples = np.empty((height, width, 3), dtype=np.float64)
        samples[...] = np.asarray(rgb, dtype=np.float64)
        return cls(samples)


def read_image(path: str) -> Image:
    """
    Reads a PNG or PPM file as an RGB image.

    Raises:
        FileNotFoundError: If the file does not exist.
        ValueError: If the file is not a readable image.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"cannot read image file {path}")
    try:
        with PILImage.open(path) as handle:
            array = np.asarray(handle.convert("RGB"))
    except (OSError, SyntaxError) as e:
        raise ValueError(f"cannot read image file {path}: {e}") from e
    return Image.from_uint8(array)


def write_image(image: Image, path: str) -> None:
    """Writes `image` as PNG, or as binary PPM when the path ends in .ppm."""
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    pil_image = PILImage.fromarray(image.to_uint8())
    if path.lower().endswith(".ppm"):
        pil_image.save(path, format="PPM")
    else:
        pil_image.save(path, format="PNG")


def image_to_png_bytes(image: Image) -> bytes:
    buffer = io.BytesIO()
    PILImage.fromarray(image.to_uint8()).save(buffer, format="PNG")
    return buffer.getvalue()


def psnr(a: Image, b: Image) -> float:
    """Peak signal-to-noise ratio in dB for images on the [0, 1] scale."""
    mse = float(np.mean((a.samples - b.samples) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)
