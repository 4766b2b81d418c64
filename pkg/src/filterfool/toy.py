"""Synthetic 10-label / 3-group image set and the toy classifier trained on it.

Labels are drawn shapes on textured backgrounds:

    round:    0 disc, 1 ring, 2 ellipse, 3 dot grid (in a disc)
    angular:  4 square, 5 triangle, 6 cross
    patterns: 7 horizontal stripes, 8 vertical stripes, 9 checkerboard (each in a square patch)
"""

import logging

import numpy as np
import torch
import torch.nn.functional as F

from .classifiers import toy_classifier
from .taxonomy import HypernymGraph, LabelTaxonomy

log = logging.getLogger(__name__)

SIZE = 32
LABEL_NAMES = (
    "disc",
    "ring",
    "ellipse",
    "dot grid",
    "square",
    "triangle",
    "cross",
    "horizontal stripes",
    "vertical stripes",
    "checkerboard",
)
GROUPS = ([0, 1, 2, 3], [4, 5, 6], [7, 8, 9])
GROUP_NAMES = ("round", "angular", "patterns")


def _node(name):
    return "toy:" + name.replace(" ", "_")


def toy_taxonomy():
    tax = LabelTaxonomy.from_groups(GROUPS, GROUP_NAMES, LABEL_NAMES)
    return LabelTaxonomy(tax.class_of, tax.class_names, tax.label_names, tuple(_node(n) for n in LABEL_NAMES))


def toy_hypernyms():
    """Three-level tree: shape -> group -> label."""
    parents = {_node(g): {"toy:shape"} for g in GROUP_NAMES}
    for g, members in zip(GROUP_NAMES, GROUPS):
        for i in members:
            parents[_node(LABEL_NAMES[i])] = {_node(g)}
    return HypernymGraph(parents)


def _mask(label, rng):
    n = SIZE
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    cy, cx = rng.uniform(11, 21, size=2)
    r = rng.uniform(6, 10)
    if label == 0:
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if label == 1:
        d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        return (d <= r) & (d >= r - rng.uniform(2, 3.5))
    if label == 2:
        a, b = r, r * rng.uniform(0.35, 0.6)
        if rng.random() < 0.5:
            a, b = b, a
        return ((yy - cy) / a) ** 2 + ((xx - cx) / b) ** 2 <= 1
    if label == 3:
        step = rng.integers(5, 7)
        oy, ox = rng.integers(0, step, size=2)
        dots = ((yy - oy) % step - step / 2) ** 2 + ((xx - ox) % step - step / 2) ** 2 <= (step / 4) ** 2 + 1
        return dots & ((yy - cy) ** 2 + (xx - cx) ** 2 <= (r + 2) ** 2)
    if label == 4:
        return (np.abs(yy - cy) <= r * 0.8) & (np.abs(xx - cx) <= r * 0.8)
    if label == 5:
        top, h = cy - r, 2 * r
        t = (yy - top) / h
        return (t >= 0) & (t <= 1) & (np.abs(xx - cx) <= t * r)
    if label == 6:
        w = rng.uniform(1.5, 3)
        arm = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= w)
        return arm | ((np.abs(xx - cx) <= r) & (np.abs(yy - cy) <= w))
    # patterns fill a square patch so that every label is a local object
    patch = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
    period = rng.integers(4, 7)
    phase = rng.integers(0, period)
    if label == 7:
        return patch & (((yy + phase) % period) < period / 2)
    if label == 8:
        return patch & (((xx + phase) % period) < period / 2)
    return patch & ((((yy + phase) // (period / 2)) + ((xx + phase) // (period / 2))) % 2 == 0)


def render(label, rng):
    """One (32, 32, 3) image of ``label`` in [0, 1]."""
    n = SIZE
    yy, xx = np.mgrid[0:n, 0:n] / (n - 1)
    c0, c1 = rng.uniform(0.05, 0.95, size=(2, 3))
    angle = rng.uniform(0, 2 * np.pi)
    t = (np.cos(angle) * (xx - 0.5) + np.sin(angle) * (yy - 0.5)) + 0.5
    bg = c0 + np.clip(t, 0, 1)[..., None] * (c1 - c0) * 0.5
    fg = rng.uniform(0.0, 1.0, size=3)
    # keep the shape visible against the mean background colour
    while np.abs(fg - bg.mean(axis=(0, 1))).max() < 0.3:
        fg = rng.uniform(0.0, 1.0, size=3)
    m = _mask(label, rng)[..., None]
    img = np.where(m, fg, bg) + rng.normal(0, 0.03, size=(n, n, 3))
    return np.clip(img, 0.0, 1.0)


def make_dataset(n, seed=0):
    """``n`` images with labels cycling through 0..9, shuffled by ``seed``."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % len(LABEL_NAMES)
    rng.shuffle(labels)
    images = np.stack([render(int(y), rng) for y in labels])
    return images, labels


def train_toy(n_train=6000, epochs=15, seed=0, batch_size=64, lr=2e-3):
    """Train the toy classifier; returns (model, held-out accuracy)."""
    torch.manual_seed(seed)
    x, y = make_dataset(n_train, seed)
    xv, yv = make_dataset(500, seed + 1)
    X = torch.as_tensor(x, dtype=torch.float32).permute(0, 3, 1, 2)
    Y = torch.as_tensor(y)
    model = toy_classifier(len(LABEL_NAMES))
    net = model.backbone
    net.train()
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    gen = torch.Generator().manual_seed(seed)
    for epoch in range(epochs):
        perm = torch.randperm(len(X), generator=gen)
        total = 0.0
        for i in range(0, len(X), batch_size):
            idx = perm[i : i + batch_size]
            loss = F.cross_entropy(net(X[idx]), Y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
        log.info("epoch %d loss %.4f", epoch, total / len(X))
    net.eval()
    with torch.no_grad():
        Xv = torch.as_tensor(xv, dtype=torch.float32).permute(0, 3, 1, 2)
        acc = float((model(Xv).argmax(1).numpy() == yv).mean())
    return model, acc


def save_toy(model, path):
    torch.save({"num_labels": model.meta.num_labels, "state_dict": model.backbone.state_dict()}, path)
