"""Target image filters and the residuals they induce.

Every filter maps an (H, W, 3) image in [0, 1] to another one. The residual
``filter_residual(img, spec)`` is the learning target of the attack: the
intensity change the filter applies, taken before the output is clipped.
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from .image_core import clip01, lab_to_rgb, rgb_to_lab


class FilterKind(str, enum.Enum):
    GAMMA = "gamma"
    LOG = "log"
    LINEAR_DETAIL = "linear_detail"
    NONLINEAR_DETAIL = "nonlinear_detail"


# short names used on the command line and in experiment tables
FILTER_ALIASES = {
    "gc": FilterKind.GAMMA,
    "lt": FilterKind.LOG,
    "ld": FilterKind.LINEAR_DETAIL,
    "nd": FilterKind.NONLINEAR_DETAIL,
}


@dataclass(frozen=True)
class FilterSpec:
    kind: FilterKind
    gamma: float = 0.5
    alpha: float = 1.0
    smoothing_lambda: float = 0.02
    kappa: float = 2.0
    beta_max: float = 1e5
    sigmoid_params: tuple = field(default=(56.0, 1.0, 15.0))
    # residual taken after clipping the filtered image (off: the pure filter change)
    clip_residual: bool = False

    def __post_init__(self):
        kind = self.kind
        if not isinstance(kind, FilterKind):
            kind = FILTER_ALIASES.get(str(kind).lower()) or FilterKind(str(kind).lower())
            object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "sigmoid_params", tuple(float(v) for v in self.sigmoid_params))
        if not 0.1 <= self.gamma <= 10:
            raise ValueError(f"gamma must be in [0.1, 10], got {self.gamma}")
        if not 0.1 <= self.alpha <= 10:
            raise ValueError(f"alpha must be in [0.1, 10], got {self.alpha}")
        if self.smoothing_lambda <= 0:
            raise ValueError("smoothing_lambda must be positive")
        if self.kappa <= 1:
            raise ValueError("kappa must exceed 1")
        if len(self.sigmoid_params) != 3 or not 0 <= self.sigmoid_params[0] <= 100:
            raise ValueError("sigmoid_params must be (v1, v2, v3) with v1 in [0, 100]")

    def to_dict(self):
        return {
            "kind": self.kind.value,
            "gamma": self.gamma,
            "alpha": self.alpha,
            "smoothing_lambda": self.smoothing_lambda,
            "kappa": self.kappa,
            "beta_max": self.beta_max,
            "sigmoid_params": list(self.sigmoid_params),
            "clip_residual": self.clip_residual,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "sigmoid_params" in d:
            d["sigmoid_params"] = tuple(d["sigmoid_params"])
        return cls(**d)


def gamma_correct(img, gamma):
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    return np.power(np.asarray(img, dtype=np.float64), 1.0 / gamma)


def log_transform(img):
    return np.log1p(255.0 * np.asarray(img, dtype=np.float64)) / np.log(256.0)


def _diff_ops(shape):
    """Squared magnitudes of the circular forward-difference transfer functions."""
    h, w = shape
    fx = np.abs(1.0 - np.exp(-2j * np.pi * np.arange(w) / w)) ** 2
    fy = np.abs(1.0 - np.exp(-2j * np.pi * np.arange(h) / h)) ** 2
    return fy[:, None] + fx[None, :]


def l0_smooth(img, lam=0.02, kappa=2.0, beta_max=1e5):
    """Edge-preserving smoothing by L0 gradient minimization.

    Half-quadratic splitting: alternate hard-thresholding of auxiliary
    gradients with an FFT least-squares solve, doubling (``kappa``) the
    coupling weight from ``2 * lam`` until ``beta_max``. Boundaries are
    circular. Channels of a 3-D input are smoothed independently.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    if kappa <= 1:
        raise ValueError("kappa must exceed 1")
    S = np.array(img, dtype=np.float64)
    squeeze = S.ndim == 2
    if squeeze:
        S = S[..., None]
    denom_grad = _diff_ops(S.shape[:2])[..., None]
    F_img = np.fft.fft2(S, axes=(0, 1))
    beta = 2.0 * lam
    while beta < beta_max:
        h = np.roll(S, -1, axis=1) - S
        v = np.roll(S, -1, axis=0) - S
        drop = (h * h + v * v) < lam / beta
        h[drop] = 0.0
        v[drop] = 0.0
        # adjoint of the forward differences
        div = (np.roll(h, 1, axis=1) - h) + (np.roll(v, 1, axis=0) - v)
        F_S = (F_img + beta * np.fft.fft2(div, axes=(0, 1))) / (1.0 + beta * denom_grad)
        S = np.real(np.fft.ifft2(F_S, axes=(0, 1)))
        beta *= kappa
    return S[..., 0] if squeeze else S


def _detail_layer(img, lam, kappa, beta_max, smooth):
    smooth = smooth or (lambda x: l0_smooth(x, lam, kappa, beta_max))
    return img - smooth(img)


def linear_detail_enhance(img, alpha=1.0, lam=0.02, kappa=2.0, beta_max=1e5, smooth=None):
    """I + alpha * (I - S(I)), clipped; ``smooth`` overrides the L0 smoother."""
    img = np.asarray(img, dtype=np.float64)
    return clip01(img + alpha * _detail_layer(img, lam, kappa, beta_max, smooth))


def sigmoid_centered(a, b):
    return 1.0 / (1.0 + np.exp(-a * b)) - 0.5


def enhance_lightness(L, L_smooth, params=(56.0, 1.0, 15.0)):
    """Sigmoid tone curve on the base layer plus sigmoid-boosted details."""
    v1, v2, v3 = params
    detail = L - L_smooth
    return (100.0 * sigmoid_centered((L_smooth - v1) / 100.0, v2) + v1) + 100.0 * sigmoid_centered(detail / 100.0, v3)


def _nonlinear_raw(img, params, lam, kappa, beta_max):
    lab = rgb_to_lab(img)
    L = lab[..., 0]
    L_smooth = 100.0 * l0_smooth(L / 100.0, lam, kappa, beta_max)
    lab = lab.copy()
    lab[..., 0] = enhance_lightness(L, L_smooth, params)
    return lab_to_rgb(lab)


def nonlinear_detail_enhance(img, params=(56.0, 1.0, 15.0), lam=0.02, kappa=2.0, beta_max=1e5):
    """Lightness-only detail enhancement in Lab; chroma channels are kept."""
    return clip01(_nonlinear_raw(np.asarray(img, dtype=np.float64), params, lam, kappa, beta_max))


def _raw_filtered(img, spec):
    img = np.asarray(img, dtype=np.float64)
    if spec.kind is FilterKind.GAMMA:
        return gamma_correct(img, spec.gamma)
    if spec.kind is FilterKind.LOG:
        return log_transform(img)
    if spec.kind is FilterKind.LINEAR_DETAIL:
        return img + spec.alpha * _detail_layer(img, spec.smoothing_lambda, spec.kappa, spec.beta_max, None)
    return _nonlinear_raw(img, spec.sigmoid_params, spec.smoothing_lambda, spec.kappa, spec.beta_max)


def apply_filter(img, spec):
    return clip01(_raw_filtered(img, spec))


def filter_residual(img, spec):
    """Filtered minus original image; pre-clip unless ``spec.clip_residual``."""
    img = np.asarray(img, dtype=np.float64)
    out = _raw_filtered(img, spec)
    if spec.clip_residual:
        out = clip01(out)
    return out - img
