"""Name -> factory registry for model adapters, and the checkpoint archive format.

A checkpoint is a single ``.npz`` file. Every parameter tensor is stored under
``param/<state-dict key>``; the entry ``meta`` holds a JSON record
``{"kind", "name", "lineage", "config"}`` where ``kind`` is the registry name
used to rebuild the model and ``config`` its constructor arguments.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Callable

import numpy as np

from .base import DifferentiableModel, TorchModel

Factory = Callable[..., DifferentiableModel]

_lock = threading.Lock()
_factories: dict[str, Factory] = {}


class UnknownModelError(KeyError):
    def __init__(self, name: str, known):
        self.name = name
        self.known = sorted(known)
        super().__init__(f"unknown model {name!r}; registered: {', '.join(self.known) or '(none)'}")

    def __str__(self):
        return self.args[0]


class DuplicateModelError(ValueError):
    pass


def register_adapter(name: str, factory: Factory) -> None:
    """Register ``factory(**config) -> DifferentiableModel`` under ``name``."""
    with _lock:
        if name in _factories:
            raise DuplicateModelError(f"model {name!r} is already registered")
        _factories[name] = factory


def unregister_adapter(name: str) -> None:
    with _lock:
        _factories.pop(name, None)


def registered_models() -> list[str]:
    return sorted(_factories)


def load_model(name: str, config: dict | None = None) -> DifferentiableModel:
    """Build a fresh handle. A ``checkpoint`` entry in ``config`` loads weights from that archive."""
    config = dict(config or {})
    checkpoint = config.pop("checkpoint", None)
    factory = _factories.get(name)
    if factory is None:
        raise UnknownModelError(name, _factories)
    if checkpoint is not None:
        model = load_checkpoint(checkpoint)
        if config.get("name"):
            model.name = config["name"]
        return model
    return factory(**config)


def save_checkpoint(model: TorchModel, path: str | Path) -> Path:
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(".npz")
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"kind": model.kind, "name": model.name, "lineage": model.lineage, "config": model.config}
    arrays = {f"param/{k}": v for k, v in model.state_dict().items()}
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with np.load(Path(path), allow_pickle=False) as archive:
        if "meta" not in archive.files:
            raise ValueError(f"{path}: not a model checkpoint (no meta record)")
        meta = json.loads(str(archive["meta"]))
        params = {k[len("param/"):]: archive[k] for k in archive.files if k.startswith("param/")}
    return meta, params


def load_checkpoint(path: str | Path) -> TorchModel:
    meta, params = read_checkpoint(path)
    factory = _factories.get(meta["kind"])
    if factory is None:
        raise UnknownModelError(meta["kind"], _factories)
    model = factory(name=meta["name"], lineage=meta.get("lineage", ""), **meta["config"])
    model.load_state_dict(params)
    return model
