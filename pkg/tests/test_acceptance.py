"""Acceptance checks 1-12. Each prints one PASS/FAIL line (also collected in the terminal summary)."""

import itertools
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from advtransfer import cli
from advtransfer.attack import AttackConfig, cw_attack
from advtransfer.harness import pool as pools
from advtransfer.harness.config import load_config
from advtransfer.harness.dataset import MANIFEST, export_dataset, import_dataset, manifest_line
from advtransfer.harness.experiments import (
    precision_sweep_config,
    prefix_attack_config,
    run_attack_batch,
    run_precision_sweep,
    run_prefix_experiment,
)
from advtransfer.audio import PCM_LSB
from advtransfer.metrics import (
    Level,
    edit_distance,
    epsilon_for_target_snr,
    mean_score,
    snr_db,
    targeted_success,
    topk_match_accuracy,
    TokenSequence,
)
from advtransfer.models import CtcAlignmentError, ModelMode, ctc_loss
from advtransfer.models.synthetic import make_speech_dataset
from advtransfer.targets import AttackTarget, TargetCorpus, TargetKind, sample_simplex, sample_topk_target

from oracles import all_strings, central_difference, ctc_brute_force, edit_distance_table, random_log_probs

SMOKE = Path(__file__).resolve().parent.parent / "configs" / "smoke.yaml"

# pinned tolerances and thresholds
TOPK_EXAMPLE = 2 / 3
CTC_TOL = 1e-6
GRAD_REL_TOL = 1e-4
BOUND_SLACK = 1e-9
SNR_TOL = 1e-9
SIMPLEX_MEAN_TOL = 0.01
KS_MAX = 0.01
WHITEBOX_CHAR_MIN = 0.9
TOPK_WHITEBOX_MIN = 0.95
TRANSFER_GAP_MIN = 0.1
PREFIX_DIAG_MIN = 0.9

# desk-scale attack settings (bound and penalty rescaled to the toy loss)
TOY_ATTACK = dict(linf_radius=0.1, reg_const=1.0, learning_rate=5e-4, iterations=1000,
                  checkpoint_every=100, stochastic_proxy=True)


def test_c01_topk_worked_example(criterion):
    t0 = time.perf_counter()
    y = [0, 0.17, 0, 0, 0.55, 0.28, 0, 0, 0, 0]
    f = [0.1, 0.05, 0.05, 0.05, 0.35, 0.2, 0.05, 0.05, 0.05, 0.05]
    acc = topk_match_accuracy(f, y, 3)
    dt = time.perf_counter() - t0
    criterion(1, acc == TOPK_EXAMPLE and dt < 1.0, f"top-3 accuracy {acc!r} (expected 2/3) in {dt:.3f}s")


def test_c02_edit_distance_exhaustive(criterion):
    t0 = time.perf_counter()
    table = edit_distance_table("abc", 6)
    seqs = {s: TokenSequence(tuple(s), Level.CHAR) for s in all_strings("abc", 6)}
    mismatches = sum(edit_distance(seqs[a], seqs[b]) != d for (a, b), d in table.items())
    dt = time.perf_counter() - t0
    criterion(2, mismatches == 0 and dt < 60,
              f"{len(table)} pairs, {mismatches} mismatches, {dt:.1f}s")


def test_c03_ctc_brute_force(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    cases, worst, wrong_errors = 0, 0.0, 0
    for T in range(1, 7):
        for V in range(2, 5):
            lp = random_log_probs(rng, T, V)
            for L in range(0, 4):
                for target in itertools.product(range(1, V), repeat=L):
                    ref = ctc_brute_force(lp, target)
                    cases += 1
                    if math.isinf(ref):
                        try:
                            ctc_loss(lp, list(target))
                            wrong_errors += 1
                        except CtcAlignmentError:
                            pass
                        continue
                    worst = max(worst, abs(ctc_loss(lp, list(target)) - ref))
    dt = time.perf_counter() - t0
    ok = worst <= CTC_TOL and wrong_errors == 0 and dt < 60
    criterion(3, ok, f"{cases} cases, max |diff| {worst:.2e}, infeasible not raising {wrong_errors}, {dt:.1f}s")


def _grad_check(model, x, target, rng, n_dirs=3):
    model.set_mode(ModelMode.DETERMINISTIC)
    loss, g = model.loss_and_gradient(x, target)
    worst = 0.0
    for _ in range(n_dirs):
        v = rng.normal(size=x.shape)
        v /= np.linalg.norm(v)
        fd = central_difference(lambda z: model.loss(z, target), x, v)
        an = float(np.sum(g * v))
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-12))
    return worst


def test_c04_gradients_match_finite_differences(ctc_pool, classifier_pair, criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    ctc, clf = ctc_pool[0], classifier_pair[0]
    utts = make_speech_dataset(10, seed=44, words=(1, 2))
    corpus = TargetCorpus.default()
    worst = 0.0
    for i, u in enumerate(utts):
        # half the pairs use the utterance's own transcript, half a short foreign target
        text = u.transcript if i % 2 else corpus.candidates[i][:12]
        worst = max(worst, _grad_check(ctc, u.waveform, AttackTarget(TargetKind.TRANSCRIPT, text=text), rng))
    for _ in range(10):
        x = rng.uniform(0, 1, size=(3, 16, 16))
        worst = max(worst, _grad_check(clf, x, sample_topk_target(10, int(rng.integers(1, 11)), rng), rng))
    dt = time.perf_counter() - t0
    criterion(4, worst < GRAD_REL_TOL and dt < 120, f"20 pairs, worst relative error {worst:.2e}, {dt:.1f}s")


def test_c05_constraint_invariants(ctc_pool, criterion):
    t0 = time.perf_counter()
    proxy = ctc_pool[0]
    samples = make_speech_dataset(10, seed=55)
    corpus = TargetCorpus.default()
    # loud inputs (peak 0.99) and a large step so both the ball and the [-1, 1] clip are exercised
    cfg = AttackConfig(linf_radius=0.015, learning_rate=0.05, iterations=1000, reg_const=10.0)
    worst_bound, worst_range, hits, clipped = 0.0, 0.0, 0, 0
    for i, s in enumerate(samples):
        x = s.waveform * (0.99 / np.abs(s.waveform).max())
        target = AttackTarget(TargetKind.TRANSCRIPT, text=corpus.candidates[i % len(corpus)])

        def check(it, delta):
            nonlocal worst_bound, worst_range, hits, clipped
            adv = x + delta
            m = float(np.abs(delta).max())
            worst_bound = max(worst_bound, m - cfg.linf_radius)
            worst_range = max(worst_range, float(np.abs(adv).max()) - 1.0)
            hits += m >= cfg.linf_radius - 1e-12
            clipped += bool(np.any(np.abs(adv) >= 1.0 - 1e-12))

        cw_attack([proxy], None, x, target, cfg, on_iterate=check)
    dt = time.perf_counter() - t0
    ok = worst_bound <= BOUND_SLACK and worst_range <= 0.0 and dt < 300
    criterion(5, ok, f"10 x 1000 iterates: max(|d|_inf - eps) {worst_bound:.1e}, max(|x+d|) - 1 {worst_range:.1e}, "
                     f"iterates at the bound {hits}, at the clip {clipped}, {dt:.1f}s")


def test_c06_snr_helpers(criterion):
    rng = np.random.default_rng(6)
    worst, scaling = 0.0, 0.0
    for n in (1, 7, 1000, 16000):
        x = rng.normal(scale=0.1, size=n)
        eps = epsilon_for_target_snr(x, 30)
        d = eps * rng.choice([-1.0, 1.0], size=n)
        worst = max(worst, abs(snr_db(x, d) - 30))
        scaling = max(scaling, abs(snr_db(x, d / 10) - snr_db(x, d) - 20))
    x = np.sin(np.linspace(0, 20, 800))
    d = epsilon_for_target_snr(x, 30) * np.sign(np.cos(np.arange(800)))
    worst = max(worst, abs(snr_db(x, d) - 30))
    ok = worst <= SNR_TOL and scaling <= SNR_TOL
    criterion(6, ok, f"max |SNR - 30| {worst:.1e} dB; delta/10 identity off by {scaling:.1e} dB")


def test_c07_simplex_sampler(criterion):
    rng = np.random.default_rng(7)
    draws3 = np.array([sample_simplex(3, rng) for _ in range(100_000)])
    mean_err = float(np.abs(draws3.mean(axis=0) - 1 / 3).max())
    first2 = np.array([sample_simplex(2, rng)[0] for _ in range(100_000)])
    ks = stats.kstest(first2, "uniform").statistic
    criterion(7, mean_err <= SIMPLEX_MEAN_TOL and ks < KS_MAX,
              f"k=3 max |mean - 1/3| {mean_err:.4f}; k=2 KS statistic {ks:.4f}")


@pytest.fixture(scope="module")
def whitebox_run(ctc_pool):
    proxy, validation = ctc_pool[0], ctc_pool[1]
    samples = make_speech_dataset(20, seed=100)
    t0 = time.perf_counter()
    examples = run_attack_batch(samples, [proxy], validation, TargetCorpus.default(),
                                AttackConfig(seed=0, **TOY_ATTACK))
    return proxy, validation, examples, time.perf_counter() - t0


def test_c08_whitebox_toy_attack(whitebox_run, criterion):
    proxy, _, examples, dt = whitebox_run
    failed = [e.id for e in examples if not e.ok]
    scores = [targeted_success(proxy.predict(e.adversarial), e.target.text, Level.CHAR).value for e in examples if e.ok]
    rate = mean_score(scores)
    criterion(8, not failed and len(scores) == 20 and rate >= WHITEBOX_CHAR_MIN and dt < 900,
              f"targeted char success {rate:.3f} over {len(scores)} utterances, failed {failed}, {dt:.0f}s")


@pytest.fixture(scope="module")
def precision_curve(classifier_pair, image_test_set):
    proxy, private = classifier_pair
    images, _ = image_test_set
    t0 = time.perf_counter()
    curve = run_precision_sweep(proxy, private, list(range(1, 11)), n_inputs=16, repeats=3,
                                config=precision_sweep_config(seed=0), images=images)
    return curve, time.perf_counter() - t0


def test_c09_precision_sweep(precision_curve, criterion):
    curve, dt = precision_curve
    wb_min = min(curve.whitebox)
    gap = curve.at(1)[1] - curve.at(9)[1]
    ok = wb_min >= TOPK_WHITEBOX_MIN and gap >= TRANSFER_GAP_MIN and dt < 1800
    series = " ".join(f"k{k}:{w:.2f}/{t:.2f}" for k, w, t in zip(curve.ks, curve.whitebox, curve.transfer))
    criterion(9, ok, f"min white-box {wb_min:.3f}, transfer k=1 minus k=9 {gap:.3f}, {dt:.0f}s [{series}]")


def test_precision_sweep_chance_levels(precision_curve):
    curve, _ = precision_curve
    chance = 1 / 10
    assert curve.at(1)[1] > chance
    assert curve.at(10)[1] <= 3 * chance


def test_c10_prefix_transfer_shape(ctc_pool, criterion):
    t0 = time.perf_counter()
    samples = make_speech_dataset(10, seed=7)
    matrix = run_prefix_experiment(ctc_pool, samples, "BUT", prefix_attack_config(seed=0))
    dt = time.perf_counter() - t0
    table = matrix.rate_table("prefix_success")
    diag = [table[i, i] for i in range(len(ctc_pool))]
    chance = [matrix.clean[m]["prefix_rate"] for m in matrix.models]
    off = [(table[i, j], chance[j]) for i in range(3) for j in range(3) if i != j]
    ok = min(diag) >= PREFIX_DIAG_MIN and all(v > c for v, c in off) and dt < 1800
    criterion(10, ok, f"diagonal {np.round(diag, 2).tolist()}, off-diagonal {[round(v, 2) for v, _ in off]} "
                      f"vs chance {np.round(chance, 2).tolist()}, mean {matrix.off_diagonal_mean('prefix_success'):.2f} "
                      f"sd {matrix.off_diagonal_sd('prefix_success'):.2f}, {dt:.0f}s")


def test_c11_validation_checkpointing(whitebox_run, criterion):
    _, _, examples, _ = whitebox_run
    bad = []
    for e in examples:
        vals = dict(e.validation_loss_trace)
        final = e.validation_loss_trace[-1][1]
        if vals[e.best_iteration] > final or e.validation_loss_trace[-1][0] != TOY_ATTACK["iterations"]:
            bad.append(e.id)
    criterion(11, not bad and len(examples) == 20,
              f"best-checkpoint loss <= final-iterate loss on {len(examples) - len(bad)}/{len(examples)} samples")


def test_c12_reproducibility(tmp_path, toy_config, criterion):
    overrides = [f"model_cache={toy_config.model_cache}", "attack.iterations=50", "seed=7"]
    argv = ["--config", str(SMOKE), *overrides[:2], "--seed", "7"]
    rc = [cli.main(["attack", *argv, "--out", str(tmp_path / run)]) for run in ("a", "b")]
    a = (tmp_path / "a" / "dataset" / MANIFEST).read_bytes()
    b = (tmp_path / "b" / "dataset" / MANIFEST).read_bytes()
    imported = import_dataset(tmp_path / "a" / "dataset")
    export_dataset(imported, tmp_path / "c")
    c = (tmp_path / "c" / MANIFEST).read_bytes()
    # the same run in-process gives the unquantized waveforms to compare against
    cfg = load_config(SMOKE, overrides)
    pool = pools.ctc_pool(cfg)
    originals = run_attack_batch(pools.attack_samples(cfg), pools.select(pool, cfg.run.proxies),
                                 pools.select(pool, [cfg.run.validation])[0], TargetCorpus.default(),
                                 cfg.resolved_attack())
    same_lines = "".join(manifest_line(e) + "\n" for e in originals).encode() == a
    by_id = {e.id: e for e in imported}
    err = max(max(float(np.abs(by_id[o.id].clean - o.clean).max()),
                  float(np.abs(by_id[o.id].adversarial - o.adversarial).max())) for o in originals)
    ok = rc == [0, 0] and a == b and a == c and same_lines and len(imported) == 3 and err <= PCM_LSB
    criterion(12, ok, f"exit codes {rc}, manifests identical {a == b}, round trip identical {a == c}, "
                      f"in-process manifest identical {same_lines}, max waveform error {err / PCM_LSB:.2f} LSB")
