"""Image loading/saving and heatmap overlays."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError


class ImageFormatError(ValueError):
    pass


SUPPORTED_FORMATS = ("PNG", "PPM")


def _open(path) -> Image.Image:
    try:
        img = Image.open(path)
        if img.format not in SUPPORTED_FORMATS:
            raise ImageFormatError(f"{path}: unsupported format {img.format} (PNG or PPM P6 only)")
        img.load()
    except UnidentifiedImageError as exc:
        raise ImageFormatError(f"{path}: unsupported or unrecognised image format") from exc
    except (OSError, SyntaxError) as exc:
        raise ImageFormatError(f"{path}: truncated or corrupt image ({exc})") from exc
    return img


def load_image(path) -> np.ndarray:
    """Read an 8-bit RGB image as a 3×H×W float array in [0, 1]."""
    img = _open(path)
    if img.mode != "RGB":
        img = img.convert("RGB")
    return np.asarray(img, dtype=np.float64).transpose(2, 0, 1) / 255.0


def load_mask(path) -> np.ndarray:
    """Binary mask: any nonzero pixel is foreground."""
    img = _open(path)
    arr = np.asarray(img)
    if arr.ndim == 3:
        arr = arr.max(axis=2)
    return arr > 0


def to_uint8(image) -> np.ndarray:
    """3×H×W float in [0, 1] to H×W×3 bytes."""
    return np.ascontiguousarray(np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8).transpose(1, 2, 0))


def save_image(image, path) -> None:
    """Write a 3×H×W [0, 1] image; format from the suffix (.png or .ppm)."""
    Image.fromarray(to_uint8(image)).save(path)


def save_mask(mask, path) -> None:
    Image.fromarray(np.asarray(mask, dtype=np.uint8) * 255).save(path)


def colormap(values) -> np.ndarray:
    """Blue→green on [0, 0.5], green→red on [0.5, 1]. Returns 3×H×W."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    lo = v <= 0.5
    t_lo = v * 2.0
    t_hi = (v - 0.5) * 2.0
    r = np.where(lo, 0.0, t_hi)
    g = np.where(lo, t_lo, 1.0 - t_hi)
    b = np.where(lo, 1.0 - t_lo, 0.0)
    return np.stack([r, g, b])


def overlay(saliency, image, alpha: float = 0.5) -> np.ndarray:
    return alpha * colormap(saliency) + (1.0 - alpha) * np.asarray(image, dtype=np.float64)


def save_heatmap(saliency, image, path, alpha: float = 0.5) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_image(overlay(saliency, image, alpha), path)
