"""Toy model pools and datasets resolved from an experiment config, with on-disk caching."""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path

from ..audio import AudioSample
from ..models import load_checkpoint, save_checkpoint
from ..models.base import DifferentiableModel
from ..models.synthetic import make_image_dataset, make_speech_dataset
from ..models.training import train_toy_pool
from .config import ConfigError, ExperimentConfig

log = logging.getLogger(__name__)

CACHE_VERSION = 1


def _key(spec: dict) -> str:
    blob = json.dumps({**spec, "v": CACHE_VERSION}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def training_speech(cfg: ExperimentConfig) -> list[AudioSample]:
    return make_speech_dataset(cfg.data.train_size, seed=cfg.data.train_seed, prefix="train")


def attack_samples(cfg: ExperimentConfig) -> list[AudioSample]:
    return make_speech_dataset(cfg.data.n_samples, seed=cfg.data.data_seed)


def image_sets(cfg: ExperimentConfig):
    c = cfg.data.image_contrast
    train = make_image_dataset(cfg.data.image_train_size, seed=cfg.data.image_seed, contrast=c, noise=2 * c)
    test = make_image_dataset(cfg.data.image_test_size, seed=cfg.data.image_seed + 1, contrast=c, noise=2 * c)
    return train, test


def _cached_pool(architecture: str, seeds, spec: dict, cache: Path, build_data) -> list[DifferentiableModel]:
    cache.mkdir(parents=True, exist_ok=True)
    key = _key({"architecture": architecture, **spec})
    paths = {s: cache / f"{architecture}_s{s}-{key}.npz" for s in seeds}
    missing = [s for s, p in paths.items() if not p.is_file()]
    if missing:
        log.info("training %s for seeds %s (cache %s)", architecture, missing, cache)
        trained = train_toy_pool(architecture, build_data(), missing,
                                 model_kwargs=spec["model"], train_kwargs=spec["train"])
        for s, model in zip(missing, trained):
            save_checkpoint(model, paths[s])
    return [load_checkpoint(paths[s]) for s in seeds]


def ctc_pool(cfg: ExperimentConfig) -> list[DifferentiableModel]:
    """Recognizers for every configured seed, plus any extra checkpoints, in config order."""
    spec = {"model": {"dropout": cfg.models.ctc_dropout}, "train": {"epochs": cfg.models.ctc_epochs},
            "data": [cfg.data.train_size, cfg.data.train_seed]}
    pool = _cached_pool("toy_ctc", cfg.models.ctc_seeds, spec, cfg.cache_dir(), lambda: training_speech(cfg))
    for name, path in cfg.models.checkpoints.items():
        model = load_checkpoint(path)
        model.name = name
        pool.append(model)
    return pool


def classifier_pair(cfg: ExperimentConfig) -> list[DifferentiableModel]:
    seeds = cfg.models.classifier_seeds
    if len(seeds) < 2:
        raise ValueError("the precision sweep needs two classifier seeds (proxy, private)")
    d = cfg.data
    spec = {"model": {}, "train": {"epochs": cfg.models.classifier_epochs},
            "data": [d.image_train_size, d.image_seed, d.image_contrast]}
    return _cached_pool("toy_classifier", seeds[:2], spec, cfg.cache_dir(), lambda: image_sets(cfg)[0])


def select(pool: list[DifferentiableModel], names) -> list[DifferentiableModel]:
    by_name = {m.name: m for m in pool}
    missing = [n for n in names if n not in by_name]
    if missing:
        raise ConfigError(f"models {missing} not in pool {sorted(by_name)}")
    return [by_name[n] for n in names]
