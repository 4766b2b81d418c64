"""Uniform wrapper around differentiable image classifiers.

A :class:`Classifier` takes a (N, 3, H, W) batch with values in [0, 1] and
returns logits. Resizing and per-channel normalisation happen inside the
module, so gradients reach the [0, 1] image directly.
"""

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .image_core import to_tensor

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
WEIGHTS_ENV = "FILTERFOOL_WEIGHTS"


class ModelUnavailable(RuntimeError):
    """Pretrained weights are missing and cannot be downloaded."""


@dataclass(frozen=True)
class ModelMeta:
    name: str
    input_size: tuple
    num_labels: int
    mean: tuple = None
    std: tuple = None


@dataclass
class Prediction:
    label: int
    probability: float
    topk: list = field(default_factory=list)


class Classifier(nn.Module):
    def __init__(self, backbone, meta):
        super().__init__()
        self.backbone = backbone
        self.meta = meta
        if meta.mean is not None:
            self.register_buffer("mean", torch.tensor(meta.mean).view(1, 3, 1, 1))
            self.register_buffer("std", torch.tensor(meta.std).view(1, 3, 1, 1))
        else:
            self.mean = self.std = None
        self.eval()

    def preprocess(self, x):
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (N, 3, H, W) input, got {tuple(x.shape)}")
        if tuple(x.shape[-2:]) != tuple(self.meta.input_size):
            x = F.interpolate(x, size=self.meta.input_size, mode="bilinear", align_corners=False)
        if self.mean is not None:
            x = (x - self.mean.to(x.dtype)) / self.std.to(x.dtype)
        return x

    def forward(self, x):
        return self.backbone(self.preprocess(x))

    def train(self, mode=True):
        # stays in inference mode: dropout and batch-norm statistics are frozen
        return super().train(False)

    @property
    def dtype(self):
        return next(self.parameters()).dtype


def _as_batch(model, img):
    if isinstance(img, np.ndarray):
        return to_tensor(img, dtype=model.dtype)
    return img if img.dim() == 4 else img.unsqueeze(0)


def logits(model, img):
    """(D,) logits for one image, differentiable with respect to ``img``."""
    return model(_as_batch(model, img))[0]


def softmax_probs(z):
    return torch.softmax(torch.as_tensor(z, dtype=torch.float64), dim=-1)


def prediction_from_logits(z, k=1):
    z = torch.as_tensor(z).detach().to(torch.float64).reshape(-1)
    D = z.numel()
    if not 1 <= k <= D:
        raise ValueError(f"k must be in [1, {D}], got {k}")
    p = torch.softmax(z, dim=0).numpy()
    zn = z.numpy()
    # ranks by logit (softmax is monotone); stable sort keeps lower index first on ties
    order = np.argsort(-zn, kind="stable")[:k]
    topk = [(int(i), float(p[i])) for i in order]
    return Prediction(label=topk[0][0], probability=topk[0][1], topk=topk)


@torch.no_grad()
def predict_topk(model, img, k=1):
    return prediction_from_logits(logits(model, img), k)


class ToyNet(nn.Module):
    """Small 4-layer CNN for 32x32 inputs."""

    def __init__(self, num_labels=10):
        super().__init__()
        layers = []
        for i, (cin, cout) in enumerate([(3, 16), (16, 32), (32, 64), (64, 64)]):
            layers += [nn.Conv2d(cin, cout, 3, stride=1 if i == 0 else 2, padding=1), nn.BatchNorm2d(cout), nn.ReLU()]
        self.features = nn.Sequential(*layers)
        self.fc = nn.Linear(64, num_labels)

    def forward(self, x):
        return self.fc(self.features(x).mean(dim=(2, 3)))


def toy_classifier(num_labels=10, state_dict=None):
    meta = ModelMeta("toy", (32, 32), num_labels)
    model = Classifier(ToyNet(num_labels), meta)
    if state_dict is not None:
        model.backbone.load_state_dict(state_dict)
    return model


_TORCHVISION = {
    "resnet50": ("resnet50", "ResNet50_Weights"),
    "resnet18": ("resnet18", "ResNet18_Weights"),
    "alexnet": ("alexnet", "AlexNet_Weights"),
}

MODEL_NAMES = ("resnet50", "resnet18", "alexnet", "toy")


def weights_dir(path=None):
    return Path(path or os.environ.get(WEIGHTS_ENV) or Path.home() / ".cache" / "filterfool")


def load_model(name, cache_dir=None, offline=False, weights_file=None, dtype=torch.float32):
    """Build a classifier by registry name.

    ``toy`` reads ``toy.pt`` from the cache directory (written by
    ``train-toy``). Torchvision models download into the cache unless
    ``offline`` is set, in which case the weight file must already be there.
    A ``weights_file`` overrides the pretrained weights (for example an
    adversarially trained ResNet50).
    """
    name = name.lower()
    cache = weights_dir(cache_dir)
    if name == "toy":
        path = Path(weights_file) if weights_file else cache / "toy.pt"
        if not path.exists():
            raise ModelUnavailable(f"toy weights not found at {path}; run `filterfool train-toy` first")
        blob = torch.load(path, map_location="cpu", weights_only=True)
        return toy_classifier(int(blob["num_labels"]), blob["state_dict"]).to(dtype)
    if name not in _TORCHVISION:
        raise KeyError(f"unknown model {name!r}; choose from {MODEL_NAMES}")
    import torchvision.models as tvm

    builder_name, weights_name = _TORCHVISION[name]
    weights = getattr(tvm, weights_name).IMAGENET1K_V1
    backbone = getattr(tvm, builder_name)(weights=None)
    if weights_file:
        state = torch.load(weights_file, map_location="cpu", weights_only=True)
    else:
        fname = Path(weights.url).name
        target = cache / "checkpoints" / fname
        if not target.exists():
            if offline:
                raise ModelUnavailable(f"offline and {target} is missing")
            cache.mkdir(parents=True, exist_ok=True)
            try:
                state = torch.hub.load_state_dict_from_url(
                    weights.url, model_dir=str(cache / "checkpoints"), progress=False, check_hash=True
                )
            except Exception as exc:  # network errors come in many types
                raise ModelUnavailable(f"could not download {name} weights: {exc}") from exc
        else:
            state = torch.load(target, map_location="cpu", weights_only=True)
    backbone.load_state_dict(state)
    meta = ModelMeta(name, (224, 224), 1000, IMAGENET_MEAN, IMAGENET_STD)
    return Classifier(backbone, meta).to(dtype)
