import numpy as np
import pytest
from hypothesis import given, strategies as st

from advtransfer.audio import AudioSample
from advtransfer.metrics import clean_text
from advtransfer.targets import (
    AttackTarget,
    TargetCorpus,
    TargetKind,
    assign_length_matched_targets,
    closest_length_index,
    filter_prefix_eligible,
    make_prefix_target,
    ordered_subset,
    prefix_success,
    sample_simplex,
    sample_topk_target,
    topk_distribution,
)


def utt(i, text):
    return AudioSample(f"u{i}", np.zeros(4), text)


class TestCorpus:
    def test_default_has_thirteen(self):
        assert len(TargetCorpus.default()) == 13

    def test_rejects_empty_and_duplicates(self):
        with pytest.raises(ValueError, match="empty"):
            TargetCorpus(())
        with pytest.raises(ValueError, match="duplicate"):
            TargetCorpus(("a", "a"))

    def test_file_round_trip(self, tmp_path):
        c = TargetCorpus(("one two", "three"))
        c.write(tmp_path / "c.txt")
        assert TargetCorpus.from_file(tmp_path / "c.txt") == c


class TestLengthMatching:
    def test_closest(self):
        assert closest_length_index(10, [3, 9, 14]) == 1

    def test_tie_prefers_first(self):
        assert closest_length_index(10, [8, 12]) == 0

    def test_assignment(self):
        corpus = TargetCorpus(("hi", "a medium one", "a considerably longer sentence here"))
        got = assign_length_matched_targets([utt(0, "yo"), utt(1, "a sentence that is rather long")], corpus)
        assert got["u0"].text == "hi"
        assert got["u1"].text == "a considerably longer sentence here"
        assert got["u0"].kind is TargetKind.TRANSCRIPT

    @given(st.text(alphabet="AB ", min_size=1, max_size=40))
    def test_assigned_is_nearest(self, text):
        corpus = TargetCorpus.default()
        target = assign_length_matched_targets([utt(0, text)], corpus)["u0"]
        lens = [len(clean_text(c)) for c in corpus.candidates]
        n = len(clean_text(text))
        assert abs(len(clean_text(target.text)) - n) == min(abs(x - n) for x in lens)


class TestPrefix:
    def test_target_text(self):
        t = make_prefix_target("the cat sat", "BUT")
        assert t.text == "BUT the cat sat" and t.word == "BUT" and t.kind is TargetKind.PREFIX

    def test_rejects_multiword(self):
        with pytest.raises(ValueError):
            make_prefix_target("x", "but then")
        with pytest.raises(ValueError):
            make_prefix_target("x", " ")

    def test_success_is_case_insensitive_first_word(self):
        assert prefix_success("but the cat", "BUT")
        assert not prefix_success("butter the cat", "BUT")
        assert not prefix_success("the but", "BUT")
        assert not prefix_success("", "BUT")

    def test_eligibility(self):
        kept = filter_prefix_eligible([utt(0, "But no"), utt(1, "no but")], "but")
        assert [u.id for u in kept] == ["u1"]


class TestTopk:
    def test_distribution_is_sorted_on_subset(self):
        y = topk_distribution(5, [3, 0, 4], [0.2, 0.5, 0.3])
        np.testing.assert_allclose(y, [0.3, 0, 0, 0.5, 0.2])

    def test_invalid_subset(self):
        with pytest.raises(ValueError):
            topk_distribution(3, [0, 0], [0.5, 0.5])
        with pytest.raises(ValueError):
            topk_distribution(3, [0, 3], [0.5, 0.5])

    @given(st.integers(1, 10), st.integers(0, 2**32 - 1))
    def test_sampled_target_invariants(self, k, seed):
        t = sample_topk_target(10, k, np.random.default_rng(seed))
        y = np.array(t.distribution)
        assert t.k == k and (y > 0).sum() == k
        assert y.sum() == pytest.approx(1.0, abs=1e-12)
        sub = ordered_subset(t)
        assert len(sub) == k and np.all(np.diff(y[sub]) <= 0)

    def test_k_range(self, rng):
        with pytest.raises(ValueError):
            sample_topk_target(10, 0, rng)
        with pytest.raises(ValueError):
            sample_topk_target(10, 11, rng)

    def test_simplex_k1(self, rng):
        assert sample_simplex(1, rng).tolist() == [1.0]

    def test_seeded(self):
        a = sample_topk_target(10, 4, np.random.default_rng(3))
        b = sample_topk_target(10, 4, np.random.default_rng(3))
        assert a == b


class TestAttackTarget:
    def test_round_trip(self, rng):
        for t in (AttackTarget("transcript", text="HI"), make_prefix_target("x y", "BUT"),
                  sample_topk_target(10, 3, rng)):
            assert AttackTarget.from_dict(t.to_dict()) == t

    def test_validation(self):
        with pytest.raises(ValueError):
            AttackTarget(TargetKind.TRANSCRIPT, text="  ")
        with pytest.raises(ValueError):
            AttackTarget(TargetKind.CLASS_DISTRIBUTION, distribution=(0.5, 0.4), k=2)
        with pytest.raises(ValueError):
            AttackTarget(TargetKind.CLASS_DISTRIBUTION, distribution=(0.5, 0.5, 0.0), k=3)
