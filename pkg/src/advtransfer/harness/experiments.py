"""Experiment drivers: batch attacks, transfer matrices, the top-k precision sweep, prefix transfer."""

from __future__ import annotations

import copy
import logging
import math
import queue
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from ..attack import AttackConfig, Norm, Schedule, StepRule, cw_attack, pgd_attack
from ..audio import AudioSample
from ..metrics import Level, mean_score, targeted_success, topk_match_accuracy, untargeted_success, wer
from ..models.base import DifferentiableModel, ModelMode
from ..models.toy_classifier import kl_to_target
from ..targets import (
    AttackTarget,
    TargetCorpus,
    TargetKind,
    assign_length_matched_targets,
    filter_prefix_eligible,
    make_prefix_target,
    prefix_success,
    sample_topk_target,
)

log = logging.getLogger(__name__)


def derive_seed(master: int, *keys: int) -> int:
    """Independent 32-bit seed for a (master, key...) tuple; stable across worker layouts."""
    return int(np.random.SeedSequence([int(master) & 0xFFFFFFFF, *(int(k) for k in keys)]).generate_state(1)[0])


@dataclass
class AdversarialExample:
    id: str
    clean: np.ndarray
    delta: np.ndarray
    target: AttackTarget
    transcript: str
    proxies: tuple[str, ...]
    achieved_snr: float
    config_fingerprint: str
    best_iteration: int = 0
    proxy_loss_trace: list = field(default_factory=list)
    validation_loss_trace: list = field(default_factory=list)
    error: str | None = None

    @property
    def adversarial(self) -> np.ndarray:
        return self.clean + self.delta

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def proxy_key(self) -> str:
        return "+".join(self.proxies)


def _map_with_handles(fn, jobs: Sequence, handles, workers: int) -> list:
    """Run ``fn(job, handles)`` over ``jobs``; with several workers each gets its own deep copy of ``handles``."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job, handles) for job in jobs]
    free: queue.Queue = queue.Queue()
    for _ in range(min(workers, len(jobs))):
        free.put(copy.deepcopy(handles))

    def run(job):
        h = free.get()
        try:
            return fn(job, h)
        finally:
            free.put(h)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, jobs))


def _check_names(proxies: Sequence[DifferentiableModel], validation_proxy: DifferentiableModel | None):
    names = [p.name for p in proxies]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate proxy names: {names}")
    if validation_proxy is not None and validation_proxy.name in names:
        raise ValueError(f"validation proxy {validation_proxy.name!r} is also an attack proxy")


def run_attack_batch(samples: Sequence[AudioSample], proxies: Sequence[DifferentiableModel],
                     validation_proxy: DifferentiableModel | None, corpus: TargetCorpus,
                     config: AttackConfig, *, workers: int = 1) -> list[AdversarialExample]:
    """Length-matched targeted attack on every sample. A sample whose attack
    fails comes back with ``error`` set and a zero perturbation."""
    if not samples:
        raise ValueError("no samples to attack")
    if not proxies:
        raise ValueError("at least one proxy model is required")
    _check_names(proxies, validation_proxy)
    targets = assign_length_matched_targets(samples, corpus)
    fingerprint = config.fingerprint()
    names = tuple(p.name for p in proxies)

    def attack_one(job, handles):
        i, sample = job
        prox, val = handles
        target = targets[sample.id]
        cfg = replace(config, seed=derive_seed(config.seed, i))
        try:
            res = cw_attack(prox, val, sample.waveform, target, cfg)
        except Exception as exc:  # one bad sample must not sink the batch
            log.warning("attack on %s failed: %s", sample.id, exc)
            return AdversarialExample(sample.id, sample.waveform, np.zeros_like(sample.waveform), target,
                                      sample.transcript, names, math.inf, fingerprint, error=str(exc))
        return AdversarialExample(
            id=sample.id, clean=sample.waveform, delta=res.delta, target=target,
            transcript=sample.transcript, proxies=names, achieved_snr=res.achieved_snr,
            config_fingerprint=fingerprint, best_iteration=res.best_iteration,
            proxy_loss_trace=res.proxy_loss_trace, validation_loss_trace=res.validation_loss_trace,
        )

    return _map_with_handles(attack_one, list(enumerate(samples)), (list(proxies), validation_proxy), workers)


@dataclass
class Cell:
    rates: dict[str, float]
    n: int
    transferred: bool
    valid: bool = True
    error: str | None = None
    records: list[dict] = field(default_factory=list)  # raw per-example transcriptions


TRANSCRIPT_METRICS = ("targeted_word", "targeted_char", "untargeted_word")
PREFIX_METRIC = "prefix_success"


@dataclass
class TransferMatrix:
    """Rows are proxies (or proxy ensembles), columns the evaluated models."""

    proxies: list[str]
    models: list[str]
    cells: dict[tuple[str, str], Cell]
    clean: dict[str, dict[str, float]]  # per model: clean "wer" (and "prefix_rate" for prefix runs)
    metrics: tuple[str, ...] = TRANSCRIPT_METRICS

    def __post_init__(self):
        for (p, m), cell in self.cells.items():
            for name, v in cell.rates.items():
                if cell.valid and not 0.0 <= v <= 1.0:
                    raise ValueError(f"rate {name}={v} for ({p}, {m}) outside [0, 1]")

    def cell(self, proxy: str, model: str) -> Cell:
        return self.cells[(proxy, model)]

    def is_diagonal(self, proxy: str, model: str) -> bool:
        return not self.cells[(proxy, model)].transferred

    def rate_table(self, metric: str) -> np.ndarray:
        out = np.full((len(self.proxies), len(self.models)), np.nan)
        for i, p in enumerate(self.proxies):
            for j, m in enumerate(self.models):
                c = self.cells[(p, m)]
                if c.valid:
                    out[i, j] = c.rates[metric]
        return out

    def off_diagonal(self, metric: str) -> list[float]:
        return [c.rates[metric] for (p, m), c in self._ordered() if c.valid and c.transferred]

    def off_diagonal_mean(self, metric: str) -> float:
        vals = self.off_diagonal(metric)
        return float(np.mean(vals)) if vals else math.nan

    def off_diagonal_sd(self, metric: str) -> float:
        """Sample standard deviation (ddof=1) of the transferred cells."""
        vals = self.off_diagonal(metric)
        return float(np.std(vals, ddof=1)) if len(vals) > 1 else math.nan

    def _ordered(self):
        return [((p, m), self.cells[(p, m)]) for p in self.proxies for m in self.models]

    def to_dict(self) -> dict:
        return {
            "proxies": list(self.proxies),
            "models": list(self.models),
            "metrics": list(self.metrics),
            "clean": self.clean,
            "cells": [
                {"proxy": p, "model": m, "rates": c.rates, "n": c.n, "transferred": c.transferred,
                 "valid": c.valid, "error": c.error, "records": c.records}
                for (p, m), c in self._ordered()
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransferMatrix":
        cells = {
            (c["proxy"], c["model"]): Cell(dict(c["rates"]), int(c["n"]), bool(c["transferred"]),
                                           bool(c["valid"]), c.get("error"), list(c.get("records", [])))
            for c in d["cells"]
        }
        return cls(list(d["proxies"]), list(d["models"]), cells, dict(d["clean"]), tuple(d["metrics"]))


def _score(prediction: str, ex: AdversarialExample, metrics: Sequence[str]) -> dict[str, float]:
    out = {}
    for name in metrics:
        if name == "targeted_word":
            out[name] = targeted_success(prediction, ex.target.text, Level.WORD).value
        elif name == "targeted_char":
            out[name] = targeted_success(prediction, ex.target.text, Level.CHAR).value
        elif name == "untargeted_word":
            out[name] = untargeted_success(prediction, ex.transcript, Level.WORD).value
        elif name == PREFIX_METRIC:
            out[name] = float(prefix_success(prediction, ex.target.word))
        else:
            raise ValueError(f"unknown metric {name!r}")
    return out


def evaluate_transfer(models: Sequence[DifferentiableModel], examples: Sequence[AdversarialExample], *,
                      lineages: dict[str, str] | None = None, workers: int = 1) -> TransferMatrix:
    """Every model transcribes every example, clean and perturbed.

    A cell is flagged as non-transferred when the evaluated model is one of the
    example's proxies or shares a lineage (e.g. the same pretrained checkpoint)
    with one of them. ``lineages`` supplies lineages of proxies absent from ``models``.
    """
    usable = [e for e in examples if e.ok]
    prefix = any(e.target.kind is TargetKind.PREFIX for e in usable)
    metrics = TRANSCRIPT_METRICS + ((PREFIX_METRIC,) if prefix else ())
    lineage = dict(lineages or {})
    lineage.update({m.name: m.lineage or m.name for m in models})
    proxies: list[str] = []
    for e in usable:
        if e.proxy_key not in proxies:
            proxies.append(e.proxy_key)
    clean_ids, clean_examples = set(), []
    for e in usable:
        if e.id not in clean_ids:
            clean_ids.add(e.id)
            clean_examples.append(e)
    word = next((e.target.word for e in usable if e.target.kind is TargetKind.PREFIX), "")

    def evaluate_model(model_idx, handles):
        model = handles[model_idx]
        model.set_mode(ModelMode.DETERMINISTIC)
        stats: dict[str, float] = {}
        try:
            preds = [model.predict(e.clean) for e in clean_examples]
            stats["wer"] = mean_score(wer(e.transcript, p) for e, p in zip(clean_examples, preds))
            if prefix:
                stats["prefix_rate"] = mean_score(float(prefix_success(p, word)) for p in preds)
        except Exception as exc:
            log.warning("clean transcription with %s failed: %s", model.name, exc)
            stats["wer"] = math.nan
        row = {}
        for key in proxies:
            group = [e for e in usable if e.proxy_key == key]
            flagged = model.name in group[0].proxies or lineage.get(model.name, model.name) in {
                lineage.get(p, p) for p in group[0].proxies}
            try:
                records, scores = [], []
                for e in group:
                    pred = model.predict(e.adversarial)
                    records.append({"id": e.id, "prediction": pred, "target": e.target.text,
                                    "reference": e.transcript})
                    scores.append(_score(pred, e, metrics))
                rates = {m: mean_score(s[m] for s in scores) for m in metrics}
                row[key] = Cell(rates, len(group), not flagged, records=records)
            except Exception as exc:
                log.warning("model %s failed on examples from %s: %s", model.name, key, exc)
                row[key] = Cell({m: math.nan for m in metrics}, len(group), not flagged, valid=False, error=str(exc))
        return model.name, stats, row

    results = _map_with_handles(evaluate_model, list(range(len(models))), list(models), workers)
    cells, clean = {}, {}
    for name, stats, row in results:
        clean[name] = stats
        for key, cell in row.items():
            cells[(key, name)] = cell
    return TransferMatrix(proxies, [m.name for m in models], cells, clean, metrics)


def trace_transfer_losses(proxies: Sequence[DifferentiableModel], validation_proxy: DifferentiableModel | None,
                          private: Sequence[DifferentiableModel], sample: AudioSample, target: AttackTarget,
                          config: AttackConfig, every: int = 10) -> dict[str, list[tuple[int, float]]]:
    """Loss of the proxy ensemble and of each private model along one attack's iterates."""
    series: dict[str, list[tuple[int, float]]] = {m.name: [] for m in private}
    x = sample.waveform

    def observe(it, delta):
        if it % every == 0 or it == config.iterations:
            for m in private:
                m.set_mode(ModelMode.DETERMINISTIC)
                series[m.name].append((it, float(m.loss(x + delta, target))))

    for m in private:
        series[m.name].append((0, float(m.loss(x, target))))
    res = cw_attack(proxies, validation_proxy, x, target, config, on_iterate=observe)
    label = "proxy: " + "+".join(p.name for p in proxies)
    return {label: res.proxy_loss_trace, **{f"private: {k}": v for k, v in series.items()}}


@dataclass
class PrecisionCurve:
    ks: list[int]
    whitebox: list[float]
    transfer: list[float]
    repeats: int
    n_inputs: int
    whitebox_runs: list[list[float]] = field(default_factory=list)
    transfer_runs: list[list[float]] = field(default_factory=list)
    proxy: str = ""
    private: str = ""

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.ks, self.ks[1:])):
            raise ValueError(f"k values must be strictly increasing: {self.ks}")
        for v in list(self.whitebox) + list(self.transfer):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"success rate {v} outside [0, 1]")

    def at(self, k: int) -> tuple[float, float]:
        i = self.ks.index(k)
        return self.whitebox[i], self.transfer[i]

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("ks", "whitebox", "transfer", "repeats", "n_inputs",
                                              "whitebox_runs", "transfer_runs", "proxy", "private")}

    @classmethod
    def from_dict(cls, d: dict) -> "PrecisionCurve":
        return cls(**d)


def precision_sweep_config(**overrides) -> AttackConfig:
    """L2 ball of radius 0.5 around images in [0, 1], step size 0.1 decayed on a cosine schedule."""
    base = dict(norm=Norm.L2, l2_radius=0.5, learning_rate=0.1, step_rule=StepRule.NORMALIZED,
                lr_schedule=Schedule.COSINE, stochastic_proxy=False, clip_min=0.0, clip_max=1.0,
                iterations=1000)
    base.update(overrides)
    return AttackConfig(**base)


def _num_classes(model, images) -> int:
    return int(getattr(model, "num_classes", 0) or np.asarray(model.forward(images[:1])).shape[-1])


def run_precision_sweep(proxy: DifferentiableModel, private: DifferentiableModel, ks: Sequence[int],
                        n_inputs: int, repeats: int, config: AttackConfig, images, *,
                        steps_per_k: int = 1000,
                        on_progress: Callable[[int, int, float, float], None] | None = None) -> PrecisionCurve:
    """White-box and transferred top-k match accuracy of KL-targeted PGD, as a function of k.

    ``config.iterations`` is ignored: each k runs ``k * steps_per_k`` steps.
    """
    images = np.asarray(images, dtype=np.float64)
    C = _num_classes(proxy, images)
    ks = [int(k) for k in ks]
    bad = [k for k in ks if not 1 <= k <= C]
    if bad:
        raise ValueError(f"k values {bad} outside [1, {C}]")
    if n_inputs < 1 or n_inputs > len(images):
        raise ValueError(f"n_inputs={n_inputs} must be in [1, {len(images)}]")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    proxy.set_mode(ModelMode.DETERMINISTIC)
    private.set_mode(ModelMode.DETERMINISTIC)
    wb_runs, tr_runs = [], []
    for k in ks:
        wb_k, tr_k = [], []
        for r in range(repeats):
            rng = np.random.default_rng(derive_seed(config.seed, k, r))
            idx = rng.choice(len(images), n_inputs, replace=False)
            x = images[idx]
            y = np.stack([sample_topk_target(C, k, rng).distribution for _ in range(n_inputs)])
            cfg = replace(config, iterations=k * steps_per_k, seed=derive_seed(config.seed, k, r, 1))
            res = pgd_attack(proxy, x, lambda out: kl_to_target(out, y), cfg, batched=True)
            adv = x + res.delta
            p_wb, p_tr = proxy.forward(adv), private.forward(adv)
            wb_k.append(float(np.mean([topk_match_accuracy(p_wb[i], y[i], k) for i in range(n_inputs)])))
            tr_k.append(float(np.mean([topk_match_accuracy(p_tr[i], y[i], k) for i in range(n_inputs)])))
            if on_progress is not None:
                on_progress(k, r, wb_k[-1], tr_k[-1])
        wb_runs.append(wb_k)
        tr_runs.append(tr_k)
    return PrecisionCurve(
        ks=ks,
        whitebox=[float(np.mean(v)) for v in wb_runs],
        transfer=[float(np.mean(v)) for v in tr_runs],
        repeats=repeats, n_inputs=n_inputs,
        whitebox_runs=wb_runs, transfer_runs=tr_runs,
        proxy=proxy.name, private=private.name,
    )


def prefix_attack_config(snr_bound: float = 12.0, **overrides) -> AttackConfig:
    """L2 ball set by an SNR bound, normalized gradient steps, dropout kept on in the proxy."""
    base = dict(norm=Norm.L2, snr_bound=snr_bound, learning_rate=0.05, step_rule=StepRule.NORMALIZED,
                iterations=300, stochastic_proxy=True)
    base.update(overrides)
    return AttackConfig(**base)


def run_prefix_experiment(model_pool: Sequence[DifferentiableModel], samples: Sequence[AudioSample], word: str,
                          config: AttackConfig, *, workers: int = 1) -> TransferMatrix:
    """Each pool member attacks every eligible sample (prepend ``word`` to its
    transcript); every member then transcribes every result. The matrix carries
    a ``prefix_success`` rate per cell and each model's clean-input rate of
    already starting with ``word`` (the chance level)."""
    if not model_pool:
        raise ValueError("model pool is empty")
    _check_names(model_pool, None)
    eligible = filter_prefix_eligible(samples, word)
    if not eligible:
        raise ValueError(f"no samples left after removing those starting with {word!r}")
    fingerprint = config.fingerprint()
    jobs = [(p, i) for p in range(len(model_pool)) for i in range(len(eligible))]

    def attack_one(job, handles):
        p, i = job
        proxy, sample = handles[p], eligible[i]
        target = make_prefix_target(sample.transcript, word)
        cfg = replace(config, seed=derive_seed(config.seed, p, i))
        try:
            res = pgd_attack(proxy, sample.waveform, target, cfg)
        except Exception as exc:
            log.warning("prefix attack on %s with %s failed: %s", sample.id, proxy.name, exc)
            return AdversarialExample(sample.id, sample.waveform, np.zeros_like(sample.waveform), target,
                                      sample.transcript, (proxy.name,), math.inf, fingerprint, error=str(exc))
        return AdversarialExample(sample.id, sample.waveform, res.delta, target, sample.transcript,
                                  (proxy.name,), res.achieved_snr, fingerprint,
                                  best_iteration=res.best_iteration, proxy_loss_trace=res.proxy_loss_trace)

    examples = _map_with_handles(attack_one, jobs, list(model_pool), workers)
    matrix = evaluate_transfer(model_pool, examples, workers=workers)
    # rows follow pool order even if a proxy produced no usable example
    for p in model_pool:
        if p.name not in matrix.proxies:
            matrix.proxies.append(p.name)
            for m in model_pool:
                matrix.cells[(p.name, m.name)] = Cell({k: math.nan for k in matrix.metrics}, 0,
                                                      p.name != m.name and p.lineage != m.lineage,
                                                      valid=False, error="all attacks failed")
    matrix.proxies.sort(key=[p.name for p in model_pool].index)
    return matrix
