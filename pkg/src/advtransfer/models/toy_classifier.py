"""Small convolutional image classifier."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from ..targets import AttackTarget
from .base import InvertedDropout, TorchModel


class ConvNet(nn.Module):
    def __init__(self, num_classes=10, channels=3, width=16, dropout=0.0, size=16):
        super().__init__()
        self.c1 = nn.Conv2d(channels, width, 3, padding=1)
        self.c2 = nn.Conv2d(width, 2 * width, 3, padding=1, stride=2)
        self.drop = InvertedDropout(dropout)
        self.fc = nn.Linear(2 * width * (size // 2) ** 2, num_classes)

    def forward(self, x):
        single = x.dim() == 3
        if single:
            x = x[None]
        h = nn.functional.silu(self.c1(x))
        h = nn.functional.silu(self.c2(h))
        logits = self.fc(self.drop(h.flatten(1)))
        return logits[0] if single else logits


def kl_to_target(logits: torch.Tensor, target) -> torch.Tensor:
    """sum_i y_i (log y_i - log softmax(logits)_i) over classes with y_i > 0, summed over a batch."""
    y = torch.as_tensor(np.asarray(target, dtype=np.float64))
    logq = torch.log_softmax(logits, dim=-1)
    mask = y > 0
    ylog = torch.where(mask, y * torch.log(torch.where(mask, y, torch.ones_like(y))), torch.zeros_like(y))
    return (ylog - torch.where(mask, y * logq, torch.zeros_like(logq))).sum()


class ToyClassifier(TorchModel):
    """``forward`` returns softmax probabilities over ``num_classes``."""

    kind = "toy_classifier"

    def __init__(self, name: str = "toy_classifier", num_classes=10, channels=3, width=16, size=16,
                 dropout=0.0, seed: int = 0, lineage: str = ""):
        config = dict(num_classes=num_classes, channels=channels, width=width, size=size, dropout=dropout, seed=seed)
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            net = ConvNet(num_classes, channels, width, dropout, size)
        super().__init__(name, net, config, lineage)
        self.num_classes = num_classes

    def logits(self, x) -> np.ndarray:
        with torch.no_grad():
            return self.net(self._tensor(x)).numpy()

    def forward(self, x) -> np.ndarray:
        with torch.no_grad():
            return torch.softmax(self.net(self._tensor(x)), dim=-1).numpy()

    def target_loss(self, output, target):
        if isinstance(target, AttackTarget):
            target = target.distribution
        return kl_to_target(output, target)

    def predict(self, x):
        probs = self.forward(x)
        return probs.argmax(axis=-1) if probs.ndim > 1 else int(probs.argmax())
