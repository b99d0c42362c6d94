"""Small convolution + recurrent CTC recognizer over raw waveforms."""

from __future__ import annotations

import torch
from torch import nn

from ..targets import AttackTarget
from .base import InvertedDropout, TorchModel
from .ctc import ctc_loss_torch, greedy_decode
from .synthetic import BLANK, HOP, VOCAB_SIZE, decode, encode


class Filterbank(nn.Module):
    """Fixed short-time power spectrum: Hann-windowed cosine/sine filter pairs, hop ``HOP``."""

    def __init__(self, bins=48, kernel=128, f_lo=0.02, f_hi=0.45):
        super().__init__()
        t = torch.arange(kernel, dtype=torch.float64)
        window = torch.hann_window(kernel, periodic=False, dtype=torch.float64)
        freqs = torch.linspace(f_lo, f_hi, bins, dtype=torch.float64)
        phase = 2 * torch.pi * freqs[:, None] * t[None, :]
        weight = torch.cat([torch.cos(phase), torch.sin(phase)]) * window / window.sum() * 2
        self.register_buffer("weight", weight[:, None, :])
        self.bins = bins
        self.padding = (kernel - HOP) // 2
        self.kernel = kernel

    def forward(self, wav):
        z = nn.functional.conv1d(wav[:, None, :], self.weight, stride=HOP, padding=self.padding)
        return z[:, : self.bins] ** 2 + z[:, self.bins:] ** 2


class CtcNet(nn.Module):
    def __init__(self, filters=48, hidden=64, kernel=128, dropout=0.1, vocab=VOCAB_SIZE):
        super().__init__()
        self.frontend = Filterbank(filters, kernel)
        self.drop1 = InvertedDropout(dropout)
        self.context = nn.Conv1d(filters, hidden, 5, padding=2)
        self.rnn = nn.RNN(hidden, hidden, nonlinearity="tanh", batch_first=True, bidirectional=True)
        self.drop2 = InvertedDropout(dropout)
        self.skip = nn.Linear(hidden, 2 * hidden)
        self.out = nn.Linear(2 * hidden, vocab)

    def forward(self, wav):
        """(batch, samples) or (samples,) -> (batch, frames, vocab) log-probabilities."""
        single = wav.dim() == 1
        if single:
            wav = wav[None]
        # per-utterance zero-mean unit-variance input, as in SSL speech front-ends
        wav = (wav - wav.mean(dim=1, keepdim=True)) / torch.sqrt(wav.var(dim=1, keepdim=True) + 1e-5)
        # centred log filterbank energy; unscaled it stalls training on the all-blank plateau
        energy = (torch.log(1e-4 + self.frontend(wav)) + 4.0) / 2.5
        h = torch.tanh(self.context(self.drop1(energy))).transpose(1, 2)
        r, _ = self.rnn(h)
        h = r + self.skip(h)
        logp = torch.log_softmax(self.out(self.drop2(h)), dim=-1)
        return logp[0] if single else logp


def target_labels(target) -> list[int]:
    text = target.text if isinstance(target, AttackTarget) else str(target)
    return encode(text)


class ToyCtcModel(TorchModel):
    """Character-level CTC recognizer; ``forward`` returns (frames, vocab) log-probabilities."""

    kind = "toy_ctc"

    def __init__(self, name: str = "toy_ctc", filters=48, hidden=64, kernel=128, dropout=0.1,
                 seed: int = 0, lineage: str = ""):
        config = dict(filters=filters, hidden=hidden, kernel=kernel, dropout=dropout, seed=seed)
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            net = CtcNet(filters, hidden, kernel, dropout)
        super().__init__(name, net, config, lineage)
        self.dropout_rate = dropout

    def target_loss(self, output, target):
        return ctc_loss_torch(output, target_labels(target), BLANK)

    def predict(self, x) -> str:
        return decode(greedy_decode(self.forward(x), BLANK))

    def predict_batch(self, xs) -> list[str]:
        return [self.predict(x) for x in xs]
