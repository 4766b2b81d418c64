"""Per-image optimisation of the perturbation network.

Each attack owns a fresh :class:`~filterfool.perturb_net.PerturbNet` and an
Adam optimiser. The network output ``delta`` is pulled towards the filter
residual by the structure loss while the adversarial term pushes the
prediction out of the original semantic class (or label, in categorical
mode).
"""

import enum
import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from .classifiers import predict_topk, prediction_from_logits
from .filters import FilterKind, FilterSpec, filter_residual
from .image_core import as_image, clip01, quantize8, to_image, to_tensor
from .losses import (
    ETA,
    LossBreakdown,
    categorical_cw_loss,
    diff_class_loss,
    mse_residual_loss,
    same_class_loss,
    ssim_global,
)
from .perturb_net import FCNNConfig, init_network

log = logging.getLogger(__name__)

DEFAULT_TAU = {
    FilterKind.LINEAR_DETAIL: 0.04,
    FilterKind.NONLINEAR_DETAIL: 0.04,
    FilterKind.LOG: 0.003,
    FilterKind.GAMMA: 0.0005,
}


class Mode(str, enum.Enum):
    SEMANTIC = "semantic"
    CATEGORICAL = "categorical"


@dataclass
class AttackConfig:
    filter: FilterSpec
    tau: float = None
    max_iter: int = 3000
    step_size: float = 1e-4
    mode: Mode = Mode.SEMANTIC
    seed: int = 0
    trace: bool = False
    eta: float = ETA
    # 0 disables the adversarial term (structure-only ablation)
    adv_weight: float = 1.0
    hadamard_diff: bool = False
    # drop the adversarial term on iterations whose prediction already succeeds
    # by more than adv_margin (logit gap between best outside and best inside label)
    adv_gate: bool = True
    adv_margin: float = 0.0
    adam_betas: tuple = (0.9, 0.999)
    fcnn: FCNNConfig = field(default_factory=FCNNConfig)

    def __post_init__(self):
        if not isinstance(self.filter, FilterSpec):
            self.filter = FilterSpec.from_dict(self.filter)
        self.mode = Mode(self.mode)
        if isinstance(self.fcnn, dict):
            self.fcnn = FCNNConfig(**self.fcnn)
        if self.tau is None:
            self.tau = DEFAULT_TAU[self.filter.kind]
        if self.tau <= 0 or self.step_size <= 0 or self.max_iter < 1:
            raise ValueError("tau, step_size and max_iter must be positive")

    def to_dict(self):
        d = asdict(self)
        d["filter"] = self.filter.to_dict()
        d["mode"] = self.mode.value
        d["fcnn"]["dilations"] = list(self.fcnn.dilations)
        return d


@dataclass
class AttackResult:
    adversarial: np.ndarray
    iterations_used: int
    success: bool
    original_label: int
    adversarial_label: int
    original_class: int
    adversarial_class: int
    final_losses: LossBreakdown

    def to_dict(self):
        d = asdict(self)
        del d["adversarial"]
        return d


def success_predicate(original, current, tax, mode):
    """Whether ``current`` escapes the original label (categorical) or class."""
    a, b = original.label, current.label
    if Mode(mode) is Mode.CATEGORICAL:
        return a != b
    return tax.class_of[a] != tax.class_of[b]


def _breakdown(l2, ssim, l_str, same, diff):
    # total is the unweighted objective; the optimised one may scale or gate the adversarial term
    return LossBreakdown(
        l2=float(l2),
        ssim_term=float(1.0 - ssim),
        structure=float(l_str),
        same_class=float(same),
        diff_class=float(diff),
        semantic_adv=float(same - diff),
        total=float(l_str + same - diff),
    )


def _compose(img, delta):
    """8-bit adversarial image from the float64 input and the network residual."""
    return quantize8(clip01(img + to_image(delta)))


def filterfool_attack(img, model, tax, cfg, trace_file=None):
    """Craft an adversarial version of ``img`` mimicking ``cfg.filter``.

    Stops as soon as the prediction leaves the original class (label, in
    categorical mode), the 8-bit quantized image does too, and the structure
    loss is below ``cfg.tau``; otherwise runs ``cfg.max_iter`` iterations and
    returns the last iterate with ``success=False``. With ``adv_weight=0``
    only the structure criterion is used. ``trace_file`` receives one JSON
    line per iteration.
    """
    if tax.D != model.meta.num_labels:
        raise ValueError(f"taxonomy has {tax.D} labels, model has {model.meta.num_labels}")
    img = as_image(img)
    dtype = model.dtype
    torch.manual_seed(cfg.seed)
    x = to_tensor(img, dtype)
    delta_e = to_tensor(filter_residual(img, cfg.filter), dtype)
    net = init_network(replace(cfg.fcnn, seed=cfg.seed), dtype)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.step_size, betas=tuple(cfg.adam_betas))
    for p in model.parameters():
        p.requires_grad_(False)

    with torch.no_grad():
        original = prediction_from_logits(model(x)[0])
    y = original.label
    s = int(tax.class_of[y])
    if cfg.mode is Mode.SEMANTIC:
        inside = torch.as_tensor(tax.membership_mask(s)) != 0
    else:
        inside = torch.zeros(tax.D, dtype=torch.bool)
        inside[y] = True
    adversarial = cfg.adv_weight != 0

    it = 0
    done = False
    while True:
        delta = net(x)
        z = model(torch.clamp(x + delta, 0.0, 1.0))[0]
        l2 = mse_residual_loss(delta, delta_e)
        ssim = ssim_global(delta, delta_e)
        l_str = l2 + cfg.eta * (1.0 - ssim)
        if cfg.mode is Mode.SEMANTIC:
            same = same_class_loss(z, inside)
            diff = diff_class_loss(z, ~inside, hadamard=cfg.hadamard_diff)
            adv_term = same - diff
        else:
            adv_term = categorical_cw_loss(z, y)
            same, diff = z[y], z[~inside].max()
        with torch.no_grad():
            current = prediction_from_logits(z)
            fooled = success_predicate(original, current, tax, cfg.mode) if adversarial else True
            margin = float(z[~inside].max() - z[inside].max())
        # once fooled by more than adv_margin only the structure loss is minimised
        weight = 0.0 if (cfg.adv_gate and fooled and margin > cfg.adv_margin) else cfg.adv_weight
        total = l_str + weight * adv_term
        breakdown = _breakdown(l2.detach(), ssim.detach(), l_str.detach(), same.detach(), diff.detach())
        if trace_file is not None:
            line = {
                "iteration": it,
                "losses": breakdown.to_dict(),
                "label": current.label,
                "class": int(tax.class_of[current.label]),
            }
            trace_file.write(json.dumps(line) + "\n")
        if fooled and breakdown.structure < cfg.tau:
            adv_q = _compose(img, delta)
            qpred = predict_topk(model, adv_q)
            if not adversarial or success_predicate(original, qpred, tax, cfg.mode):
                current = qpred
                done = True
        if done or it >= cfg.max_iter:
            break
        opt.zero_grad(set_to_none=True)
        total.backward()
        opt.step()
        it += 1

    if not done:
        adv_q = _compose(img, delta)
        current = predict_topk(model, adv_q)
    return AttackResult(
        adversarial=adv_q,
        iterations_used=it,
        success=bool(done and adversarial),
        original_label=y,
        adversarial_label=current.label,
        original_class=s,
        adversarial_class=int(tax.class_of[current.label]),
        final_losses=breakdown,
    )
