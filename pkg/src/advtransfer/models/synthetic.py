"""Synthetic datasets for the toy models.

Speech: every character is rendered as a short tone at its own frequency,
separated by random leading/trailing silence, so a small CTC model can learn
to transcribe it in a minute of CPU time. Images: noisy copies of smooth
per-class templates.
"""

from __future__ import annotations

import numpy as np

from ..audio import AudioSample
from ..metrics import clean_text
from ..targets import TargetCorpus

ALPHABET = " ABCDEFGHIJKLMNOPQRSTUVWXYZ'"
BLANK = 0
VOCAB_SIZE = len(ALPHABET) + 1
HOP = 32

_CHAR_TO_ID = {c: i + 1 for i, c in enumerate(ALPHABET)}


def encode(text: str) -> list[int]:
    return [_CHAR_TO_ID[c] for c in clean_text(text) if c in _CHAR_TO_ID]


def decode(ids) -> str:
    return "".join(ALPHABET[i - 1] for i in ids if i != BLANK)


def tone_frequency(char_id: int) -> float:
    """Tone frequency in cycles per sample for a vocabulary id."""
    return 0.03 + (char_id - 1) * 0.0145


def default_lexicon() -> list[str]:
    words = []
    for sentence in TargetCorpus.default().candidates:
        for w in clean_text(sentence).split():
            if w not in words:
                words.append(w)
    return words


def render(text: str, rng: np.random.Generator, *, lead=(12, 24), trail=(2, 6),
           char_len=(80, 128), amplitude=(0.25, 0.45), noise=0.005) -> np.ndarray:
    pieces = [np.zeros(rng.integers(lead[0], lead[1] + 1) * HOP)]
    for cid in encode(text):
        n = int(rng.integers(char_len[0], char_len[1] + 1))
        t = np.arange(n)
        amp = rng.uniform(*amplitude)
        env = np.minimum(1.0, np.minimum(t + 1, n - t) / 12.0)
        pieces.append(amp * env * np.sin(2 * np.pi * tone_frequency(cid) * t + rng.uniform(0, 2 * np.pi)))
    pieces.append(np.zeros(rng.integers(trail[0], trail[1] + 1) * HOP))
    wav = np.concatenate(pieces)
    wav += noise * rng.standard_normal(wav.size)
    return np.clip(wav, -1.0, 1.0)


def random_sentence(rng: np.random.Generator, lexicon: list[str], words=(3, 7)) -> str:
    n = int(rng.integers(words[0], words[1] + 1))
    return " ".join(lexicon[i] for i in rng.integers(0, len(lexicon), size=n))


def make_speech_dataset(n: int, seed: int, lexicon: list[str] | None = None, prefix: str = "utt",
                        words=(3, 7)) -> list[AudioSample]:
    rng = np.random.default_rng(seed)
    lexicon = lexicon or default_lexicon()
    out = []
    for i in range(n):
        text = random_sentence(rng, lexicon, words)
        out.append(AudioSample(f"{prefix}{i:04d}", render(text, rng), text))
    return out


def make_image_dataset(n: int, seed: int, num_classes: int = 10, shape=(3, 16, 16),
                       contrast: float = 0.05, noise: float = 0.1, template_seed: int = 1234):
    """Images in [0, 1] drawn around fixed low-contrast class templates; returns (images, labels).

    Class evidence is a blocky pattern of amplitude ``contrast`` around mid-grey,
    so templates sit about one L2 unit apart, the regime where small perturbations
    move predictions.
    """
    trng = np.random.default_rng(template_seed)
    c, h, w = shape
    coarse = 0.5 + contrast * trng.uniform(-1.0, 1.0, size=(num_classes, c, h // 4, w // 4))
    templates = np.kron(coarse, np.ones((1, 1, 4, 4)))
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, size=n)
    images = templates[labels] + noise * rng.standard_normal((n, c, h, w))
    return np.clip(images, 0.0, 1.0), labels
