import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from maskup import continual, tagger
from maskup.continual import (
    CorrectionRecord,
    EwcState,
    accumulate,
    continual_update,
    corrections_to_corpus,
    estimate_fisher,
    ewc_penalty_and_gradient,
    pad_state,
)
from maskup.docmodel import Document, make_span, spans_to_tags
from maskup.errors import ContractError, ModelFormatError, ValidationError
from maskup.tagger import TrainConfig, neg_log_likelihood_and_gradient

from oracles import brute_penalty, central_difference, max_relative_error


class TestPenalty:
    def test_at_anchor(self):
        s = EwcState(np.array([1.0, -2.0]), np.array([3.0, 4.0]))
        pen, grad = ewc_penalty_and_gradient(np.array([1.0, -2.0]), s, 10.0)
        assert pen == 0.0 and not grad.any()

    def test_lambda_zero(self):
        s = EwcState(np.zeros(3), np.ones(3))
        pen, grad = ewc_penalty_and_gradient(np.array([5.0, -1.0, 2.0]), s, 0.0)
        assert pen == 0.0 and not grad.any()

    def test_hand_value(self):
        s = EwcState(np.array([1.0]), np.array([2.0]))
        pen, grad = ewc_penalty_and_gradient(np.array([3.0]), s, 1.0)
        assert pen == 4.0
        assert grad.tolist() == [4.0]

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            ewc_penalty_and_gradient(np.zeros(2), EwcState(np.zeros(3), np.zeros(3)), 1.0)

    def test_finite_differences(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = 30
            s = EwcState(rng.normal(size=n), rng.uniform(0, 3, n))
            theta = rng.normal(size=n)
            lam = float(rng.uniform(0.1, 100))
            _, grad = ewc_penalty_and_gradient(theta, s, lam)
            # stepping in extended precision keeps roundoff well below the tolerance
            f = lambda th: brute_penalty(th, s.theta_star, s.fisher, lam)  # noqa: E731
            numeric = central_difference(f, theta.astype(np.longdouble))
            assert max_relative_error(grad, numeric) < 1e-8

    @given(st.integers(1, 20).flatmap(lambda n: st.tuples(
        hnp.arrays(np.float64, n, elements=st.floats(-10, 10)),
        hnp.arrays(np.float64, n, elements=st.floats(-10, 10)),
        hnp.arrays(np.float64, n, elements=st.floats(0, 10)),
        st.permutations(range(n)),
    )), st.floats(0, 100))
    def test_permutation_invariant_and_nonnegative(self, data, lam):
        theta, anchor, fisher, perm = data
        perm = np.array(perm)
        a, _ = ewc_penalty_and_gradient(theta, EwcState(anchor, fisher), lam)
        b, _ = ewc_penalty_and_gradient(theta[perm], EwcState(anchor[perm], fisher[perm]), lam)
        assert a >= 0
        assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


class TestState:
    def test_invariants(self):
        with pytest.raises(ContractError):
            EwcState(np.zeros(2), np.zeros(3))
        with pytest.raises(ContractError):
            EwcState(np.zeros(2), np.array([1.0, -1.0]))
        with pytest.raises(ContractError):
            EwcState(np.zeros(1), np.array([np.inf]))

    def test_pad(self):
        s = pad_state(EwcState(np.array([1.0]), np.array([2.0])), 3)
        assert s.theta_star.tolist() == [1.0, 0.0, 0.0]
        assert s.fisher.tolist() == [2.0, 0.0, 0.0]
        with pytest.raises(ContractError):
            pad_state(s, 2)

    def test_persistence_round_trip(self, tmp_path, small_model, small_corpus):
        s = estimate_fisher(small_model, small_corpus[:10], "A")
        continual.save_state(s, tmp_path / "s.json")
        assert continual.load_state(tmp_path / "s.json") == s

    def test_persistence_corrupt(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_bytes(continual.state_to_bytes(EwcState(np.ones(4), np.ones(4)))[:-20])
        with pytest.raises(ModelFormatError):
            continual.load_state(p)


class TestFisher:
    def test_single_example(self, small_model, small_corpus):
        doc = small_corpus[0]
        _, grad = neg_log_likelihood_and_gradient(small_model, doc)
        s = estimate_fisher(small_model, [doc])
        np.testing.assert_array_equal(s.fisher, grad * grad)
        np.testing.assert_array_equal(s.theta_star, small_model.params)
        assert s.sample_count == 1

    def test_mean_of_squares(self, small_model, small_corpus):
        docs = small_corpus[:5]
        expected = sum(neg_log_likelihood_and_gradient(small_model, d)[1] ** 2 for d in docs) / 5
        np.testing.assert_allclose(estimate_fisher(small_model, docs).fisher, expected, rtol=1e-12)

    def test_nonnegative_and_deterministic(self, small_model, small_corpus):
        a = estimate_fisher(small_model, small_corpus[:30])
        b = estimate_fisher(small_model, small_corpus[:30])
        assert np.all(a.fisher >= 0)
        assert a == b

    def test_empty(self, small_model):
        with pytest.raises(ContractError):
            estimate_fisher(small_model, [])

    def test_accumulation_associative(self, small_model, small_corpus):
        fa = estimate_fisher(small_model, small_corpus[:10], "A")
        fb = estimate_fisher(small_model, small_corpus[10:20], "B")
        fc = estimate_fisher(small_model, small_corpus[20:30], "C")
        left = accumulate(accumulate(fa, fb), fc)
        right = accumulate(fa, accumulate(fb, fc))
        np.testing.assert_allclose(left.fisher, fa.fisher + fb.fisher + fc.fisher, rtol=1e-15)
        np.testing.assert_allclose(left.fisher, right.fisher, rtol=1e-15)
        np.testing.assert_array_equal(left.theta_star, fc.theta_star)
        assert left.sample_count == 30


class TestContinualUpdate:
    def test_lambda_zero_equals_plain_training(self, small_model, small_corpus):
        state = estimate_fisher(small_model, small_corpus[:40])
        new = small_corpus[100:140]
        cfg = TrainConfig(epochs=2, seed=9, ewc_lambda=0.0)
        updated, _ = continual_update(small_model, state, new, cfg)
        plain = tagger.train(new, cfg, init=small_model)
        assert updated.params.tobytes() == plain.params.tobytes()

    def test_zero_fisher_is_inert(self, small_model, small_corpus):
        state = EwcState(small_model.params.copy(), np.zeros(small_model.num_params))
        new = small_corpus[100:140]
        updated, _ = continual_update(small_model, state, new, TrainConfig(epochs=2, seed=9, ewc_lambda=100.0))
        plain = tagger.train(new, TrainConfig(epochs=2, seed=9), init=small_model)
        assert updated.params.tobytes() == plain.params.tobytes()

    def test_vocabulary_growth(self, small_model, small_corpus):
        state = estimate_fisher(small_model, small_corpus[:40])
        new = [Document.from_words(["Quetzalcoatlus", "visited", "Xanadu"], ["B-PER", "O", "B-LOC"])] * 5
        updated, new_state = continual_update(small_model, state, new, TrainConfig(epochs=3, seed=1, ewc_lambda=100.0))
        assert len(updated.vocabulary) > len(small_model.vocabulary)
        assert len(new_state) == updated.num_params
        idx = updated.vocabulary.get("w=quetzalcoatlus")
        assert idx is not None
        # the new row was free to move
        assert np.any(updated.emission[idx] != 0)

    def test_state_mismatch(self, small_model):
        with pytest.raises(ContractError):
            continual_update(small_model, EwcState(np.zeros(3), np.zeros(3)), [])

    def test_anchor_pulls_parameters(self, small_model, small_corpus):
        state = estimate_fisher(small_model, small_corpus[:100])
        new = small_corpus[150:200]
        free, _ = continual_update(small_model, state, new, TrainConfig(epochs=2, seed=2, ewc_lambda=0.0))
        held, _ = continual_update(small_model, state, new, TrainConfig(epochs=2, seed=2, ewc_lambda=1e4))
        drift = lambda m: ewc_penalty_and_gradient(m.params[: small_model.num_params], state, 1.0)[0]  # noqa: E731
        assert drift(held) < drift(free)


class TestCorrections:
    def test_no_changes(self, small_model):
        text = "Gunnar Lindqvist works for Horizon Telecom in Nairobi ."
        (doc,) = corrections_to_corpus([CorrectionRecord(text)], small_model)
        assert list(doc.tags) == tagger.decode(small_model, Document.from_text(text))

    def test_rejected_span(self, small_model):
        text = "Gunnar Lindqvist works for Horizon Telecom ."
        toks = Document.from_text(text).tokens
        rec = CorrectionRecord(text, rejected=[make_span(toks, "PER", 0, 2)])
        (doc,) = corrections_to_corpus([rec], small_model)
        assert doc.tags[:2] == ("O", "O")

    def test_added_span(self, small_model):
        text = "my cousin bruno called again ."
        toks = Document.from_text(text).tokens
        added = make_span(toks, "PER", 2, 3)
        rec = CorrectionRecord(text, added=[added])
        (doc,) = corrections_to_corpus([rec], small_model)
        assert doc.tags[2] == "B-PER"
        pred = tagger.decode(small_model, Document.from_text(text))
        expected = list(pred)
        expected[2:3] = spans_to_tags(toks[2:3], [make_span(toks[2:3], "PER", 0, 1)])
        assert list(doc.tags) == expected

    def test_conflicting_spans(self):
        toks = Document.from_text("a b c").tokens
        with pytest.raises(ValidationError):
            CorrectionRecord("a b c", accepted=[make_span(toks, "PER", 0, 2)], added=[make_span(toks, "LOC", 1, 3)])

    def test_json_round_trip(self, tmp_path):
        text = "call Ana Lima now"
        toks = Document.from_text(text).tokens
        rec = CorrectionRecord(text, added=[make_span(toks, "PER", 1, 3)], timestamp="2026-01-01T00:00:00Z")
        line = rec.to_json()
        assert json.loads(line)["added"] == [{"label": "PER", "token_start": 1, "token_end": 3}]
        p = tmp_path / "c.jsonl"
        p.write_text(line + "\n\n")
        assert continual.read_corrections(p) == [rec]
