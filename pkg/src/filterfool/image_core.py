"""Image representation and colour conversions.

Images are float64 numpy arrays of shape (H, W, 3), RGB order, values in
[0, 1]. Lab images use the same layout with channels (L, a, b).
"""

from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage

# linear sRGB -> XYZ (D65)
_RGB2XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ2RGB = np.linalg.inv(_RGB2XYZ)
# reference white is the image of RGB (1,1,1) so that white maps to a=b=0 exactly
_WHITE = _RGB2XYZ.sum(axis=1)
_EPS = (6.0 / 29.0) ** 3
_KAPPA = 3.0 * (6.0 / 29.0) ** 2


def as_image(data):
    """Validate ``data`` as an (H, W, 3) image and return it as float64."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return arr


def clip01(img):
    return np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)


def quantize8(img):
    """Snap to the 8-bit grid, rounding half away from zero."""
    x = np.asarray(img, dtype=np.float64) * 255.0
    return np.sign(x) * np.floor(np.abs(x) + 0.5) / 255.0


def _srgb_to_linear(c):
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c):
    c = np.maximum(c, 0.0)
    return np.where(c <= 0.0031308, c * 12.92, 1.055 * c ** (1.0 / 2.4) - 0.055)


def _f(t):
    return np.where(t > _EPS, np.cbrt(t), t / _KAPPA + 4.0 / 29.0)


def _finv(t):
    return np.where(t > 6.0 / 29.0, t**3, _KAPPA * (t - 4.0 / 29.0))


def rgb_to_lab(img):
    """sRGB in [0, 1] to CIE L*a*b* (D65)."""
    rgb = np.asarray(img, dtype=np.float64)
    xyz = _srgb_to_linear(rgb) @ _RGB2XYZ.T / _WHITE
    fx, fy, fz = _f(xyz[..., 0]), _f(xyz[..., 1]), _f(xyz[..., 2])
    L = 116.0 * fy - 16.0
    a = 500.0 * (fx - fy)
    b = 200.0 * (fy - fz)
    return np.stack([L, a, b], axis=-1)


def lab_to_rgb(lab):
    """Inverse of :func:`rgb_to_lab`; out-of-gamut colours are clipped."""
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack([_finv(fx), _finv(fy), _finv(fz)], axis=-1) * _WHITE
    return clip01(_linear_to_srgb(xyz @ _XYZ2RGB.T))


def load_png(path):
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_png(img, path):
    """Write an image as 8-bit PNG (quantized with :func:`quantize8`)."""
    u8 = np.rint(quantize8(clip01(img)) * 255.0).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    # no timestamps or text chunks: identical pixels give identical bytes
    PILImage.fromarray(u8).save(path, format="PNG", optimize=False)


def to_tensor(img, dtype=torch.float32):
    """(H, W, 3) array -> (1, 3, H, W) tensor."""
    return torch.as_tensor(np.ascontiguousarray(img), dtype=dtype).permute(2, 0, 1).unsqueeze(0).contiguous()


def to_image(t):
    """(1, 3, H, W) or (3, H, W) tensor -> (H, W, 3) float64 array."""
    t = t.detach()
    if t.dim() == 4:
        t = t[0]
    return t.permute(1, 2, 0).cpu().double().numpy()
