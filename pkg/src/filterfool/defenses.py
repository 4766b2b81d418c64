"""Input-transformation defenses: bit-depth reduction, median smoothing, JPEG."""

import enum
import io
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image as PILImage

from .image_core import as_image, quantize8


class DefenseKind(str, enum.Enum):
    BIT_REDUCE = "bits"
    MEDIAN = "median"
    JPEG = "jpeg"


BIT_RANGE = range(1, 8)
KERNELS = (2, 3, 5)
QUALITIES = (25, 50, 75, 100)


@dataclass(frozen=True)
class DefenseSpec:
    """One defense with its single parameter (``bits``, ``kernel`` or ``quality``)."""

    kind: DefenseKind
    bits: int = None
    kernel: int = None
    quality: int = None

    def __post_init__(self):
        object.__setattr__(self, "kind", DefenseKind(self.kind))
        given = {"bits": self.bits, "kernel": self.kernel, "quality": self.quality}
        want = {DefenseKind.BIT_REDUCE: "bits", DefenseKind.MEDIAN: "kernel", DefenseKind.JPEG: "quality"}[self.kind]
        for name, value in given.items():
            if (value is not None) != (name == want):
                raise ValueError(f"{self.kind.value} defense takes exactly the {want!r} parameter")
        if self.kind is DefenseKind.BIT_REDUCE and self.bits not in BIT_RANGE:
            raise ValueError(f"bits must be in 1..7, got {self.bits}")
        if self.kind is DefenseKind.MEDIAN and self.kernel not in KERNELS:
            raise ValueError(f"kernel must be one of {KERNELS}, got {self.kernel}")
        if self.kind is DefenseKind.JPEG and self.quality not in QUALITIES:
            raise ValueError(f"quality must be one of {QUALITIES}, got {self.quality}")

    @property
    def param(self):
        return {DefenseKind.BIT_REDUCE: self.bits, DefenseKind.MEDIAN: self.kernel, DefenseKind.JPEG: self.quality}[
            self.kind
        ]

    @classmethod
    def parse(cls, text):
        """``bits:4``, ``median:3`` or ``jpeg:75``."""
        kind, sep, param = text.strip().partition(":")
        if not sep:
            raise ValueError(f"defense {text!r} must look like kind:value")
        kind = DefenseKind(kind.strip().lower())
        field_name = {DefenseKind.BIT_REDUCE: "bits", DefenseKind.MEDIAN: "kernel", DefenseKind.JPEG: "quality"}[kind]
        return cls(kind, **{field_name: int(param)})

    def __str__(self):
        return f"{self.kind.value}:{self.param}"

    def __call__(self, img):
        return apply_defense(img, self)


def bit_reduce(img, bits):
    """Quantize each channel to ``2**bits`` evenly spaced levels."""
    if bits not in BIT_RANGE:
        raise ValueError(f"bits must be in 1..7, got {bits}")
    levels = 2**bits - 1
    x = np.asarray(img, dtype=np.float64) * levels
    # half-away-from-zero, values are non-negative
    return np.floor(x + 0.5) / levels


def median_smooth(img, k):
    """Per-channel k x k median filter with reflect padding.

    Even windows put the extra row/column before the centre and return the
    mean of the two middle values.
    """
    img = as_image(img)
    if k not in KERNELS:
        raise ValueError(f"kernel must be one of {KERNELS}, got {k}")
    before, after = k // 2, (k - 1) // 2
    padded = np.pad(img, ((before, after), (before, after), (0, 0)), mode="reflect")
    win = sliding_window_view(padded, (k, k), axis=(0, 1))
    return np.median(win.reshape(*win.shape[:3], k * k), axis=-1)


def jpeg_roundtrip(img, quality):
    """Encode and decode with Pillow's baseline JPEG codec.

    Chroma is subsampled 4:2:0 below quality 100 and kept at 4:4:4 at 100.
    """
    if quality not in QUALITIES:
        raise ValueError(f"quality must be one of {QUALITIES}, got {quality}")
    u8 = np.round(quantize8(as_image(img)) * 255).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(u8).save(
        buf, format="JPEG", quality=int(quality), subsampling=0 if quality == 100 else 2, optimize=False
    )
    buf.seek(0)
    with PILImage.open(buf) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def apply_defense(img, spec):
    if spec is None:
        return as_image(img).copy()
    if spec.kind is DefenseKind.BIT_REDUCE:
        return bit_reduce(img, spec.bits)
    if spec.kind is DefenseKind.MEDIAN:
        return median_smooth(img, spec.kernel)
    return jpeg_roundtrip(img, spec.quality)
