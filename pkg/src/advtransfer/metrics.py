"""Evaluation quantities: error rates, attack success scores, SNR, top-k match accuracy."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from . import _backend


class Level(str, Enum):
    WORD = "word"
    CHAR = "char"


class Mode(str, Enum):
    TARGETED = "targeted"
    UNTARGETED = "untargeted"


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[str, ...]
    level: Level

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


@dataclass(frozen=True)
class SuccessScore:
    value: float
    level: Level
    mode: Mode

    def __float__(self) -> float:
        return self.value


_STRIP = re.compile(r"[^A-Z0-9' ]+")
_SPACES = re.compile(r"\s+")


def clean_text(raw: str) -> str:
    """Uppercase, drop punctuation other than apostrophes, collapse whitespace."""
    text = _SPACES.sub(" ", raw.upper())
    text = _STRIP.sub("", text)
    return _SPACES.sub(" ", text).strip()


def normalize_text(raw: str, level: Level | str = Level.WORD) -> TokenSequence:
    level = Level(level)
    text = clean_text(raw)
    if level is Level.WORD:
        tokens = tuple(text.split())
    else:
        tokens = tuple(text)
    return TokenSequence(tokens, level)


def _as_sequence(seq, level: Level) -> TokenSequence:
    if isinstance(seq, TokenSequence):
        return seq
    if isinstance(seq, str):
        return normalize_text(seq, level)
    return TokenSequence(tuple(seq), level)


def edit_distance(ref: TokenSequence, hyp: TokenSequence) -> int:
    """Minimal number of insertions, deletions and substitutions turning ``ref`` into ``hyp``."""
    if ref.level != hyp.level:
        raise ValueError(f"level mismatch: {ref.level.value} vs {hyp.level.value}")
    vocab: dict[str, int] = {}
    a = [vocab.setdefault(tok, len(vocab)) for tok in ref.tokens]
    b = [vocab.setdefault(tok, len(vocab)) for tok in hyp.tokens]
    return int(_backend.edit_distance(a, b))


def error_rate(ref: TokenSequence, hyp: TokenSequence) -> float:
    """Edit distance normalised by reference length (WER or CER depending on level).

    An empty reference scores 0 against an empty hypothesis and 1 otherwise.
    """
    dist = edit_distance(ref, hyp)
    if len(ref) == 0:
        return 0.0 if len(hyp) == 0 else 1.0
    return dist / len(ref)


def wer(reference: str, hypothesis: str) -> float:
    return error_rate(normalize_text(reference, Level.WORD), normalize_text(hypothesis, Level.WORD))


def cer(reference: str, hypothesis: str) -> float:
    return error_rate(normalize_text(reference, Level.CHAR), normalize_text(hypothesis, Level.CHAR))


def targeted_success(prediction: str, target: str, level: Level | str = Level.WORD) -> SuccessScore:
    """``max(1 - ER(prediction, target), 0)``; 1 means the target was transcribed exactly."""
    level = Level(level)
    tgt = normalize_text(target, level)
    if len(tgt) == 0:
        raise ValueError("target transcript is empty")
    rate = error_rate(tgt, normalize_text(prediction, level))
    return SuccessScore(max(1.0 - rate, 0.0), level, Mode.TARGETED)


def untargeted_success(prediction: str, reference: str, level: Level | str = Level.WORD) -> SuccessScore:
    """``min(ER(prediction, reference), 1)``; 1 means total denial of service."""
    level = Level(level)
    ref = normalize_text(reference, level)
    if len(ref) == 0:
        raise ValueError("reference transcript is empty")
    rate = error_rate(ref, normalize_text(prediction, level))
    return SuccessScore(min(rate, 1.0), level, Mode.UNTARGETED)


def snr_db(signal, perturbation) -> float:
    """Signal-to-noise ratio in decibels, ``10 log10(|x|^2 / |delta|^2)``.

    Returns ``inf`` for an all-zero perturbation.
    """
    x = np.asarray(signal, dtype=np.float64).ravel()
    d = np.asarray(perturbation, dtype=np.float64).ravel()
    if x.shape != d.shape:
        raise ValueError(f"length mismatch: signal {x.size}, perturbation {d.size}")
    sig = float(np.dot(x, x))
    if sig == 0.0:
        raise ValueError("signal has zero energy")
    noise = float(np.dot(d, d))
    if noise == 0.0:
        return math.inf
    return 10.0 * math.log10(sig / noise)


def epsilon_for_target_snr(signal, target_snr: float) -> float:
    """L-infinity radius whose saturating perturbation (every sample at +/-eps)
    has exactly ``target_snr`` dB against ``signal``; any perturbation inside
    the ball therefore has SNR at least ``target_snr``.
    """
    x = np.asarray(signal, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("signal is empty")
    if not math.isfinite(target_snr):
        raise ValueError("target SNR must be finite")
    norm = float(np.linalg.norm(x))
    if norm == 0.0:
        raise ValueError("signal has zero energy")
    return norm * 10.0 ** (-target_snr / 20.0) / math.sqrt(x.size)


def l2_radius_for_target_snr(signal, target_snr: float) -> float:
    """L2 radius at which a perturbation has exactly ``target_snr`` dB against ``signal``."""
    x = np.asarray(signal, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("signal is empty")
    return float(np.linalg.norm(x)) * 10.0 ** (-target_snr / 20.0)


def descending_argsort(values) -> np.ndarray:
    """Indices sorted by decreasing value; ties keep ascending index order."""
    v = np.asarray(values, dtype=np.float64)
    return np.argsort(-v, kind="stable")


def topk_match_accuracy(output, target, k: int) -> float:
    """Fraction of the first ``k`` ranked positions where the output ranking
    agrees with the target ranking."""
    out = np.asarray(output, dtype=np.float64).ravel()
    tgt = np.asarray(target, dtype=np.float64).ravel()
    if out.shape != tgt.shape:
        raise ValueError(f"length mismatch: {out.size} vs {tgt.size}")
    if not 1 <= k <= out.size:
        raise ValueError(f"k={k} outside [1, {out.size}]")
    hits = descending_argsort(out)[:k] == descending_argsort(tgt)[:k]
    return float(hits.mean())


def mean_score(scores: Sequence[SuccessScore | float]) -> float:
    """Arithmetic mean of per-utterance scores (the corpus-level success rate)."""
    values = [float(s) for s in scores]
    if not values:
        return float("nan")
    return sum(values) / len(values)
