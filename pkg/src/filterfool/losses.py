"""Differentiable objectives of the attack.

All functions take torch tensors and return 0-dim tensors so that they can
sit inside an autograd graph. Logits are 1-D (D,) or batched (1, D).
"""

from dataclasses import asdict, dataclass

import torch

ETA = 0.01
# residuals live in [-1, 1], so the SSIM stabilisers use a dynamic range of 2
SSIM_RANGE = 2.0
SSIM_C1 = (0.01 * SSIM_RANGE) ** 2
SSIM_C2 = (0.03 * SSIM_RANGE) ** 2
SSIM_C3 = SSIM_C2 / 2.0


@dataclass
class LossBreakdown:
    l2: float
    ssim_term: float
    structure: float
    same_class: float
    diff_class: float
    semantic_adv: float
    total: float

    def to_dict(self):
        return asdict(self)


def _check_shapes(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def mse_residual_loss(delta, delta_e):
    _check_shapes(delta, delta_e)
    return torch.mean((delta - delta_e) ** 2)


def ssim_global(delta, delta_e, c1=SSIM_C1, c2=SSIM_C2, c3=SSIM_C3):
    """SSIM with a single set of statistics pooled over all elements.

    Standard deviations and covariance use the unbiased (M - 1) divisor. The
    result can be negative when the two residuals are anti-correlated.
    """
    _check_shapes(delta, delta_e)
    x = delta.reshape(-1)
    y = delta_e.reshape(-1)
    M = x.numel()
    if M < 2:
        raise ValueError("ssim_global needs at least two elements")
    mu_x, mu_y = x.mean(), y.mean()
    dx, dy = x - mu_x, y - mu_y
    var_x = (dx * dx).sum() / (M - 1)
    var_y = (dy * dy).sum() / (M - 1)
    cov = (dx * dy).sum() / (M - 1)
    # sqrt has an infinite derivative at 0; the clamp keeps the zero-residual start finite
    sd_x = torch.sqrt(torch.clamp(var_x, min=torch.finfo(x.dtype).tiny))
    sd_y = torch.sqrt(torch.clamp(var_y, min=torch.finfo(y.dtype).tiny))
    lum = (2 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1)
    con = (2 * sd_x * sd_y + c2) / (var_x + var_y + c2)
    struct = (cov + c3) / (sd_x * sd_y + c3)
    return lum * con * struct


def structure_loss(delta, delta_e, eta=ETA):
    if eta < 0:
        raise ValueError("eta must be non-negative")
    return mse_residual_loss(delta, delta_e) + eta * (1.0 - ssim_global(delta, delta_e))


def _flat_logits(logits):
    return logits.reshape(-1)


def _as_mask(mask, like):
    mask = torch.as_tensor(mask, device=like.device)
    if mask.numel() != like.numel():
        raise ValueError(f"mask length {mask.numel()} does not match {like.numel()} logits")
    return mask.reshape(-1)


def same_class_loss(logits, mask):
    """Sum of the positive logits of labels inside the original class."""
    z = _flat_logits(logits)
    m = _as_mask(mask, z).to(z.dtype)
    return torch.dot(torch.relu(z), m)


def diff_class_loss(logits, complement, hadamard=False):
    """Largest logit among labels outside the original class.

    By default this selects over the complement entries. ``hadamard=True``
    takes the max of ``z * complement`` over all labels instead, which is
    floored at 0 whenever every out-of-class logit is negative.
    """
    z = _flat_logits(logits)
    m = _as_mask(complement, z)
    if not bool((m != 0).any()):
        raise ValueError("complement mask selects no labels")
    if hadamard:
        return torch.max(z * m.to(z.dtype))
    return torch.max(z[m != 0])


def semantic_adv_loss(logits, mask, complement, hadamard=False):
    return same_class_loss(logits, mask) - diff_class_loss(logits, complement, hadamard=hadamard)


def categorical_cw_loss(logits, y):
    """Margin between the logit of ``y`` and the best other logit."""
    z = _flat_logits(logits)
    D = z.numel()
    if D < 2:
        raise ValueError("need at least two labels")
    if not 0 <= y < D:
        raise IndexError(f"label {y} out of range")
    others = torch.cat([z[:y], z[y + 1 :]])
    return z[y] - torch.max(others)
