"""Norm-bounded reference attacks: FGSM, BIM, least-likely and P-FGSM targets.

``eps`` is given on the 0-255 scale and applied as ``eps / 255`` to images in
[0, 1]. ``direction=+1`` ascends the cross-entropy of label ``y``
(untargeted); ``direction=-1`` descends it (targeted towards ``y``).
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .classifiers import logits
from .image_core import to_image, to_tensor


class EmptyCandidateSet(ValueError):
    """No label outside the original class survives the cumulative threshold."""


@dataclass
class NormAttackConfig:
    epsilon: float = 8.0
    tau_p: float = 0.99
    seed: int = 0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 <= self.tau_p <= 1.0:
            raise ValueError("tau_p must lie in [0, 1]")


def _round_half_away(x):
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def bim_iterations(eps):
    """round(min(eps + 4, 1.25 * eps)), rounding halves away from zero."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return _round_half_away(min(eps + 4.0, 1.25 * eps))


def _input_grad(model, x, y):
    x = x.detach().requires_grad_(True)
    loss = F.cross_entropy(model(x), torch.tensor([y]))
    (g,) = torch.autograd.grad(loss, x)
    return g


def fgsm(img, model, y, eps, direction=1):
    """One signed-gradient step of size eps/255, clipped to [0, 1]."""
    x = to_tensor(img, model.dtype)
    if eps == 0:
        return np.array(img, dtype=np.float64)
    step = eps / 255.0
    g = _input_grad(model, x, y)
    out = np.asarray(img, dtype=np.float64) + direction * step * to_image(torch.sign(g))
    return np.clip(out, 0.0, 1.0)


def clip_eps_ball(adv, img, eps):
    """min(1, I + e, max(0, I - e, adv)) with e = eps/255."""
    e = eps / 255.0
    return np.minimum(np.minimum(1.0, img + e), np.maximum(np.maximum(0.0, img - e), adv))


def bim(img, model, y, cfg=NormAttackConfig(), direction=1, iterations=None):
    """Iterated FGSM with unit (1/255) steps, clipped to the eps-ball at the end."""
    img = np.asarray(img, dtype=np.float64)
    n = bim_iterations(cfg.epsilon) if iterations is None else iterations
    cur = img.copy()
    for _ in range(n):
        g = _input_grad(model, to_tensor(cur, model.dtype), y)
        cur = cur + direction * to_image(torch.sign(g)) / 255.0
    return clip_eps_ball(cur, img, cfg.epsilon)


def _probs(model, img):
    with torch.no_grad():
        z = logits(model, img).double()
    return torch.softmax(z, dim=0).numpy()


def ll_target(model, img):
    """Least-likely label; ties resolve to the lowest index."""
    return int(np.argmin(_probs(model, img)))


def p_fgsm_candidates(probs, tax, y, tau_p):
    """Labels ranked after the point where cumulative probability exceeds ``tau_p``,
    restricted to classes other than that of ``y``."""
    probs = np.asarray(probs, dtype=np.float64)
    order = np.argsort(-probs, kind="stable")
    cum = np.cumsum(probs[order])
    crossed = np.nonzero(cum > tau_p)[0]
    # first j (1-based) with cumulative sum above tau_p; keep labels j+1..D
    j = int(crossed[0]) + 1 if crossed.size else len(order)
    cands = [int(i) for i in order[j:] if tax.class_of[i] != tax.class_of[y]]
    return cands


def p_fgsm_target(model, img, tax, tau_p, rng, y=None):
    probs = _probs(model, img)
    if y is None:
        y = int(np.argmax(probs))
    cands = p_fgsm_candidates(probs, tax, y, tau_p)
    if not cands:
        raise EmptyCandidateSet(f"no candidate label outside class {tax.class_of[y]} for tau_p={tau_p}")
    return int(rng.choice(sorted(cands)))


def p_fgsm(img, model, tax, cfg=NormAttackConfig()):
    """BIM descending towards a random low-ranked label of another class."""
    rng = np.random.default_rng(cfg.seed)
    target = p_fgsm_target(model, img, tax, cfg.tau_p, rng)
    return bim(img, model, target, cfg, direction=-1)


def ll_fgsm(img, model, cfg=NormAttackConfig()):
    return fgsm(img, model, ll_target(model, img), cfg.epsilon, direction=-1)


def ll_bim(img, model, cfg=NormAttackConfig()):
    return bim(img, model, ll_target(model, img), cfg, direction=-1)
