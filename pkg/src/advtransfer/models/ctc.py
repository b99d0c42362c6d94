"""CTC loss (forward-backward in log space) and greedy decoding."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch

from .. import _backend


class CtcAlignmentError(ValueError):
    """Raised when a target cannot be aligned to the available frames."""


def extend_with_blanks(labels: Sequence[int], blank: int = 0) -> np.ndarray:
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    return ext


def min_frames(labels: Sequence[int]) -> int:
    """Frames needed to emit ``labels``: one per label plus a blank between repeats."""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def _check(log_probs: np.ndarray, labels: Sequence[int], blank: int):
    if log_probs.ndim != 2:
        raise ValueError(f"log_probs must be (frames, vocab), got shape {log_probs.shape}")
    frames, vocab = log_probs.shape
    if frames == 0:
        raise CtcAlignmentError("no frames")
    if any(not 0 <= lab < vocab or lab == blank for lab in labels):
        raise ValueError(f"labels must be non-blank ids in [0, {vocab})")
    need = min_frames(labels)
    if need > frames:
        raise CtcAlignmentError(f"target needs {need} frames, only {frames} available")


def ctc_loss_and_grad(log_probs, labels: Sequence[int], blank: int = 0) -> tuple[float, np.ndarray]:
    """Negative log-probability of ``labels`` and its gradient w.r.t. ``log_probs``."""
    lp = np.ascontiguousarray(log_probs, dtype=np.float64)
    labels = [int(x) for x in labels]
    _check(lp, labels, blank)
    try:
        nll, grad = _backend.ctc_forward_backward(lp, extend_with_blanks(labels, blank))
    except ValueError as exc:
        raise CtcAlignmentError(str(exc)) from None
    return float(nll), grad


def ctc_loss(log_probs, labels: Sequence[int], blank: int = 0) -> float:
    return ctc_loss_and_grad(log_probs, labels, blank)[0]


class _CtcFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, log_probs, labels, blank):
        nll, grad = ctc_loss_and_grad(log_probs.detach().cpu().numpy(), labels, blank)
        ctx.save_for_backward(torch.from_numpy(grad).to(log_probs))
        return log_probs.new_tensor(nll)

    @staticmethod
    def backward(ctx, grad_output):
        (grad,) = ctx.saved_tensors
        return grad_output * grad, None, None


def ctc_loss_torch(log_probs: torch.Tensor, labels: Sequence[int], blank: int = 0) -> torch.Tensor:
    """Differentiable CTC loss for a single (frames, vocab) tensor of log-probabilities."""
    return _CtcFunction.apply(log_probs, list(labels), blank)


def greedy_decode(log_probs, blank: int = 0) -> list[int]:
    """Per-frame argmax, merge consecutive repeats, drop blanks."""
    best = np.asarray(log_probs).argmax(axis=-1)
    out, prev = [], None
    for lab in best.tolist():
        if lab != prev and lab != blank:
            out.append(lab)
        prev = lab
    return out
