"""Training loops for the toy models and seed-varied model pools."""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np
import torch

from ..metrics import cer, mean_score
from .base import ModelMode
from .ctc import ctc_loss_torch
from .synthetic import BLANK, HOP, encode
from .toy_classifier import ToyClassifier
from .toy_ctc import ToyCtcModel

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    def __init__(self, seed: int, epoch: int):
        super().__init__(f"training diverged (non-finite loss) for seed {seed} at epoch {epoch}")
        self.seed = seed


def _frames(n_samples: int, model: ToyCtcModel) -> int:
    k = model.config["kernel"]
    hop = HOP
    pad = model.net.frontend.padding
    return (n_samples + 2 * pad - k) // hop + 1


def train_ctc(model: ToyCtcModel, dataset, *, epochs=25, batch_size=16, lr=3e-3, seed=0) -> list[float]:
    """Adam on the summed per-utterance CTC loss; returns the mean loss per epoch."""
    rng = np.random.default_rng(seed)
    model.reseed(seed)
    model.set_mode(ModelMode.STOCHASTIC)
    opt = torch.optim.Adam(model.net.parameters(), lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=epochs)
    labels = [encode(s.transcript) for s in dataset]
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        total = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            wavs = [dataset[i].waveform for i in idx]
            width = max(w.size for w in wavs)
            batch = np.zeros((len(idx), width))
            for j, w in enumerate(wavs):
                batch[j, :w.size] = w
            logp = model.net(torch.from_numpy(batch))
            loss = sum(ctc_loss_torch(logp[j, :_frames(wavs[j].size, model)], labels[i], BLANK)
                       for j, i in enumerate(idx)) / len(idx)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(model.config.get("seed", seed), epoch)
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.net.parameters(), 5.0)
            opt.step()
            total += loss.item() * len(idx)
        sched.step()
        history.append(total / len(dataset))
        log.debug("%s epoch %d loss %.4f", model.name, epoch, history[-1])
    model.set_mode(ModelMode.DETERMINISTIC)
    return history


def train_classifier(model: ToyClassifier, images, labels, *, epochs=15, batch_size=64, lr=2e-3, seed=0) -> list[float]:
    rng = np.random.default_rng(seed)
    model.reseed(seed)
    model.set_mode(ModelMode.STOCHASTIC)
    opt = torch.optim.Adam(model.net.parameters(), lr=lr)
    x_all = torch.from_numpy(np.asarray(images, dtype=np.float64))
    y_all = torch.from_numpy(np.asarray(labels, dtype=np.int64))
    history = []
    for epoch in range(epochs):
        order = torch.from_numpy(rng.permutation(len(y_all)))
        total = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            loss = torch.nn.functional.cross_entropy(model.net(x_all[idx]), y_all[idx])
            if not torch.isfinite(loss):
                raise TrainingDivergedError(model.config.get("seed", seed), epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        history.append(total / len(y_all))
    model.set_mode(ModelMode.DETERMINISTIC)
    return history


def ctc_error_rate(model: ToyCtcModel, dataset) -> float:
    return mean_score(cer(s.transcript, model.predict(s.waveform)) for s in dataset)


def classifier_accuracy(model: ToyClassifier, images, labels) -> float:
    return float((model.predict(images) == np.asarray(labels)).mean())


def train_toy_pool(architecture: str, dataset, seeds: Sequence[int], *, name_prefix: str | None = None,
                   model_kwargs: dict | None = None, train_kwargs: dict | None = None):
    """One model per seed; everything but the seed (init, dropout masks, batch order) is shared.

    ``dataset`` is a list of AudioSample for ``toy_ctc`` or an ``(images, labels)`` pair for
    ``toy_classifier``.
    """
    model_kwargs = dict(model_kwargs or {})
    train_kwargs = dict(train_kwargs or {})
    prefix = name_prefix or architecture
    pool = []
    for seed in seeds:
        name = f"{prefix}_s{seed}"
        if architecture == "toy_ctc":
            model = ToyCtcModel(name, seed=seed, **model_kwargs)
            train_ctc(model, dataset, seed=seed, **train_kwargs)
        elif architecture == "toy_classifier":
            images, labels = dataset
            model = ToyClassifier(name, seed=seed, **model_kwargs)
            train_classifier(model, images, labels, seed=seed, **train_kwargs)
        else:
            raise ValueError(f"unknown architecture {architecture!r}; expected toy_ctc or toy_classifier")
        pool.append(model)
    return pool
