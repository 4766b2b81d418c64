"""Fully convolutional network producing the image perturbation.

A stack of 3x3 dilated convolutions (no downsampling) followed by a 1x1
projection to three channels. Intermediate layers are followed by an adaptive
normalisation (per-channel learned scale and shift) and a leaky ReLU.
"""

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn


@dataclass(frozen=True)
class FCNNConfig:
    feature_maps: int = 24
    # the trailing 1 is the final 1x1 projection
    dilations: tuple = field(default=(1, 2, 4, 8, 16, 32, 1, 1))
    leaky_slope: float = 0.2
    seed: int = 0

    def __post_init__(self):
        dil = tuple(int(d) for d in self.dilations)
        object.__setattr__(self, "dilations", dil)
        if len(dil) < 2 or any(d < 1 for d in dil):
            raise ValueError(f"invalid dilation list {dil}")
        if dil[-1] != 1:
            raise ValueError("the final 1x1 layer must have dilation 1")
        if self.feature_maps < 1:
            raise ValueError("feature_maps must be positive")

    @property
    def receptive_field(self):
        return 1 + 2 * sum(self.dilations[:-1])

    def parameter_count(self):
        f, n = self.feature_maps, len(self.dilations) - 1
        first = 3 * f * 9 + f
        hidden = (n - 1) * (f * f * 9 + f)
        norms = n * 2 * f
        last = f * 3 + 3
        return first + hidden + norms + last


class AdaptiveNorm(nn.Module):
    """Learned per-channel affine map, initialised to the identity."""

    def __init__(self, channels):
        super().__init__()
        self.scale = nn.Parameter(torch.ones(1, channels, 1, 1))
        self.shift = nn.Parameter(torch.zeros(1, channels, 1, 1))

    def forward(self, x):
        return x * self.scale + self.shift


class PerturbNet(nn.Module):
    def __init__(self, cfg=FCNNConfig()):
        super().__init__()
        self.cfg = cfg
        f = cfg.feature_maps
        layers = []
        in_ch = 3
        for d in cfg.dilations[:-1]:
            layers += [
                nn.Conv2d(in_ch, f, 3, padding=d, dilation=d),
                AdaptiveNorm(f),
                nn.LeakyReLU(cfg.leaky_slope),
            ]
            in_ch = f
        self.body = nn.Sequential(*layers)
        self.head = nn.Conv2d(f, 3, 1)

    def forward(self, x):
        return self.head(self.body(x))


def init_network(cfg=FCNNConfig(), dtype=torch.float32):
    """Seeded initialisation; the zero head makes the first output exactly 0."""
    gen = torch.Generator().manual_seed(cfg.seed)
    net = PerturbNet(cfg)
    for m in net.body:
        if isinstance(m, nn.Conv2d):
            fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
            bound = float(np.sqrt(6.0 / fan_in))
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=gen)
                m.bias.zero_()
    nn.init.zeros_(net.head.weight)
    nn.init.zeros_(net.head.bias)
    return net.to(dtype)


def forward(net, img):
    """Perturbation for an (H, W, 3) array or a (1, 3, H, W) tensor."""
    if isinstance(img, np.ndarray):
        x = torch.as_tensor(img, dtype=next(net.parameters()).dtype).permute(2, 0, 1).unsqueeze(0)
        return net(x)[0].permute(1, 2, 0)
    return net(img)


def save_checkpoint(net, path):
    """Flat little-endian float64 parameters after a length-prefixed JSON header."""
    header = json.dumps({"cfg": asdict(net.cfg), "names": [n for n, _ in net.named_parameters()]}).encode()
    flat = torch.cat([p.detach().double().reshape(-1) for p in net.parameters()]).numpy()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(flat.astype("<f8").tobytes())


def load_checkpoint(path, dtype=torch.float32):
    data = Path(path).read_bytes()
    (n,) = struct.unpack("<I", data[:4])
    header = json.loads(data[4 : 4 + n])
    net = PerturbNet(FCNNConfig(**header["cfg"])).to(torch.float64)
    flat = torch.from_numpy(np.frombuffer(data[4 + n :], dtype="<f8").copy())
    if flat.numel() != sum(p.numel() for p in net.parameters()):
        raise ValueError("checkpoint size does not match configuration")
    offset = 0
    with torch.no_grad():
        for p in net.parameters():
            k = p.numel()
            p.copy_(flat[offset : offset + k].reshape(p.shape))
            offset += k
    return net.to(dtype)
