"""The model contract consumed by the attack engine, and a torch implementation of it."""

from __future__ import annotations

import abc
from enum import Enum
from typing import Callable

import numpy as np
import torch


class ModelMode(str, Enum):
    STOCHASTIC = "stochastic"
    DETERMINISTIC = "deterministic"


class ModelEvaluationError(RuntimeError):
    """A model failed to evaluate an input; carries the model name."""

    def __init__(self, model_name: str, cause: BaseException):
        super().__init__(f"model {model_name!r} failed: {cause}")
        self.model_name = model_name
        self.cause = cause


class DifferentiableModel(abc.ABC):
    """Anything an attack can optimize against.

    Implementations only need ``forward``, ``loss_and_gradient`` and ``predict``;
    external ASR backends plug in by subclassing this and registering a factory.
    """

    name: str
    mode: ModelMode = ModelMode.DETERMINISTIC
    lineage: str = ""  # models sharing a lineage do not count as transferred targets

    def set_mode(self, mode: ModelMode | str) -> None:
        self.mode = ModelMode(mode)

    def reseed(self, seed: int) -> None:
        """Reset the randomness used in stochastic mode; no-op by default."""

    @abc.abstractmethod
    def forward(self, x) -> np.ndarray: ...

    @abc.abstractmethod
    def loss_and_gradient(self, x, target) -> tuple[float, np.ndarray]: ...

    @abc.abstractmethod
    def predict(self, x): ...

    def loss(self, x, target) -> float:
        return self.loss_and_gradient(x, target)[0]

    def input_gradient(self, x, target) -> np.ndarray:
        return self.loss_and_gradient(x, target)[1]


class InvertedDropout(torch.nn.Module):
    """Dropout drawing its masks from a private generator so runs are reproducible per handle."""

    def __init__(self, p: float):
        super().__init__()
        self.p = p
        self.generator = torch.Generator().manual_seed(0)

    def forward(self, x):
        if not self.training or self.p == 0.0:
            return x
        keep = torch.rand(x.shape, generator=self.generator, dtype=x.dtype) >= self.p
        return x * keep / (1.0 - self.p)


class TorchModel(DifferentiableModel):
    """Wraps a float64 ``torch.nn.Module``; subclasses define ``target_loss``."""

    def __init__(self, name: str, net: torch.nn.Module, config: dict | None = None, lineage: str = ""):
        self.name = name
        self.net = net.double()
        self.config = dict(config or {})
        self.lineage = lineage or name
        self.set_mode(ModelMode.DETERMINISTIC)

    def set_mode(self, mode):
        super().set_mode(mode)
        self.net.train(self.mode is ModelMode.STOCHASTIC)

    def reseed(self, seed: int) -> None:
        for i, m in enumerate(self.net.modules()):
            if isinstance(m, InvertedDropout):
                m.generator.manual_seed(int(seed) * 1000003 + i)

    def _tensor(self, x) -> torch.Tensor:
        return torch.as_tensor(np.asarray(x, dtype=np.float64))

    def output_tensor(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)

    def forward(self, x) -> np.ndarray:
        with torch.no_grad():
            return self.output_tensor(self._tensor(x)).numpy()

    @abc.abstractmethod
    def target_loss(self, output: torch.Tensor, target) -> torch.Tensor: ...

    def objective_and_gradient(self, x, objective: Callable[[torch.Tensor], torch.Tensor]):
        """Value of ``objective(model_output)`` and its gradient with respect to the input."""
        xt = self._tensor(x).clone().requires_grad_(True)
        try:
            value = objective(self.output_tensor(xt))
            (grad,) = torch.autograd.grad(value, xt)
        except Exception as exc:
            raise ModelEvaluationError(self.name, exc) from exc
        return float(value.detach()), grad.numpy()

    def loss_and_gradient(self, x, target):
        return self.objective_and_gradient(x, lambda out: self.target_loss(out, target))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.detach().numpy().copy() for k, v in self.net.state_dict().items()}

    def load_state_dict(self, state: dict) -> None:
        self.net.load_state_dict({k: torch.as_tensor(np.asarray(v)) for k, v in state.items()})
