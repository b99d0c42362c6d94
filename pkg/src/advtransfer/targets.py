"""Attack targets: length-matched transcripts, prefix words, top-k class distributions."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .metrics import clean_text, descending_argsort


class TargetKind(str, Enum):
    TRANSCRIPT = "transcript"
    PREFIX = "prefix"
    CLASS_DISTRIBUTION = "class_distribution"


@dataclass(frozen=True)
class AttackTarget:
    kind: TargetKind
    text: str = ""
    distribution: tuple[float, ...] = ()
    k: int = 0
    word: str = ""  # prefix kind only

    def __post_init__(self):
        kind = TargetKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is TargetKind.CLASS_DISTRIBUTION:
            dist = np.asarray(self.distribution, dtype=np.float64)
            if dist.ndim != 1 or dist.size == 0 or (dist < 0).any():
                raise ValueError("distribution must be a non-empty nonnegative vector")
            if abs(dist.sum() - 1.0) > 1e-9:
                raise ValueError(f"distribution sums to {dist.sum()}, not 1")
            if int((dist > 0).sum()) != self.k:
                raise ValueError(f"distribution has {(dist > 0).sum()} nonzero entries, expected k={self.k}")
            object.__setattr__(self, "distribution", tuple(float(p) for p in dist))
        elif not self.text.strip():
            raise ValueError(f"{kind.value} target needs non-empty text")

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value}
        if self.kind is TargetKind.CLASS_DISTRIBUTION:
            d.update(distribution=list(self.distribution), k=self.k)
        else:
            d["text"] = self.text
            if self.word:
                d["word"] = self.word
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "AttackTarget":
        return cls(
            kind=d["kind"],
            text=d.get("text", ""),
            distribution=tuple(d.get("distribution", ())),
            k=int(d.get("k", 0)),
            word=d.get("word", ""),
        )


def transcript_target(text: str) -> AttackTarget:
    return AttackTarget(TargetKind.TRANSCRIPT, text=text)


@dataclass(frozen=True)
class TargetCorpus:
    candidates: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        cands = tuple(self.candidates)
        if not cands:
            raise ValueError("target corpus is empty")
        if len(set(cands)) != len(cands):
            raise ValueError("target corpus contains duplicate sentences")
        object.__setattr__(self, "candidates", cands)

    def __len__(self):
        return len(self.candidates)

    @classmethod
    def from_file(cls, path: str | Path) -> "TargetCorpus":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(line.strip() for line in lines if line.strip()))

    @classmethod
    def default(cls) -> "TargetCorpus":
        """The 13 LibriSpeech test-other sentences used as candidate targets."""
        text = resources.files("advtransfer").joinpath("data/candidate_targets.txt").read_text(encoding="utf-8")
        return cls(tuple(line.strip() for line in text.splitlines() if line.strip()))

    def write(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.candidates) + "\n", encoding="utf-8")


def closest_length_index(length: int, candidate_lengths: Sequence[int]) -> int:
    # strict < keeps the earliest candidate on ties
    best, best_gap = 0, abs(candidate_lengths[0] - length)
    for i, cl in enumerate(candidate_lengths[1:], start=1):
        gap = abs(cl - length)
        if gap < best_gap:
            best, best_gap = i, gap
    return best


def assign_length_matched_targets(utterances: Iterable, corpus: TargetCorpus) -> dict:
    """Map each utterance id to the candidate whose normalized character length
    is closest to the utterance's reference transcript.

    ``utterances`` holds objects with ``id`` and ``transcript`` attributes.
    """
    lengths = [len(clean_text(c)) for c in corpus.candidates]
    out = {}
    for utt in utterances:
        idx = closest_length_index(len(clean_text(utt.transcript)), lengths)
        out[utt.id] = transcript_target(corpus.candidates[idx])
    return out


def make_prefix_target(transcript: str, word: str) -> AttackTarget:
    word = word.strip()
    if not word or len(word.split()) != 1:
        raise ValueError(f"prefix must be a single non-empty word, got {word!r}")
    text = f"{word} {transcript.strip()}".strip()
    return AttackTarget(TargetKind.PREFIX, text=text, word=word)


def starts_with_word(text: str, word: str) -> bool:
    words = clean_text(text).split()
    return bool(words) and words[0] == clean_text(word)


def prefix_success(prediction: str, word: str) -> bool:
    """True iff the first predicted word is ``word`` (case-insensitive)."""
    return starts_with_word(prediction, word)


def filter_prefix_eligible(utterances: Iterable, word: str) -> list:
    return [u for u in utterances if not starts_with_word(u.transcript, word)]


def sample_simplex(k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the unit (k-1)-simplex via normalized unit exponentials."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    e = rng.standard_exponential(k)
    return e / e.sum()


def topk_distribution(num_classes: int, subset: Sequence[int], masses: Sequence[float]) -> np.ndarray:
    """Place ``masses`` (sorted descending) on the ordered ``subset`` of classes."""
    subset = list(subset)
    masses = np.sort(np.asarray(masses, dtype=np.float64))[::-1]
    if len(subset) != len(masses):
        raise ValueError("subset and masses differ in length")
    if len(set(subset)) != len(subset) or not all(0 <= c < num_classes for c in subset):
        raise ValueError(f"invalid class subset {subset} for {num_classes} classes")
    y = np.zeros(num_classes)
    y[subset] = masses
    return y


def sample_topk_target(num_classes: int, k: int, rng: np.random.Generator) -> AttackTarget:
    """Random ordered k-subset of classes carrying a uniform simplex draw, largest mass first."""
    if not 1 <= k <= num_classes:
        raise ValueError(f"k={k} outside [1, {num_classes}]")
    subset = rng.permutation(num_classes)[:k]
    y = topk_distribution(num_classes, subset, sample_simplex(k, rng))
    return AttackTarget(TargetKind.CLASS_DISTRIBUTION, distribution=tuple(y), k=k)


def ordered_subset(target: AttackTarget) -> np.ndarray:
    return descending_argsort(target.distribution)[: target.k]
