import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from vidground import MomentGrounder
from vidground.datamodel import Corpus, CorpusError, generate_synthetic_corpus
from vidground.validation import (
    check_choice,
    check_corpus,
    check_ks,
    check_positive_float,
    check_positive_int,
    check_thresholds,
)


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic_corpus(0, 3, (64, 64), (1, 3), 8, 8, moment_length_range=(4, 20))


@pytest.fixture(scope="module")
def fitted(corpus):
    return MomentGrounder(epochs=2, T_w=64, seed=1).fit(corpus)


class TestParams:
    def test_get_set_clone(self):
        est = MomentGrounder(lr=2e-3, bq=2)
        params = est.get_params()
        assert params["lr"] == 2e-3 and params["bq"] == 2 and params["preset"] == "tiny"
        est.set_params(epochs=3)
        twin = clone(est)
        assert twin.get_params() == est.get_params() and twin is not est

    def test_repr_lists_changed_params(self):
        assert "lr=0.002" in repr(MomentGrounder(lr=2e-3))


class TestFitPredict:
    def test_not_fitted(self, corpus):
        est = MomentGrounder()
        for call in (est.predict, est.score, est.evaluate):
            with pytest.raises(NotFittedError):
                call(corpus)

    def test_fit_attributes(self, fitted):
        assert fitted.model_config_.embed_dim == 32
        assert fitted.train_config_.epochs == 2
        assert fitted.history_ and np.isfinite(fitted.history_[-1]["loss"])

    def test_predict_ranked(self, fitted, corpus):
        preds = fitted.predict(corpus)
        assert set(preds) == {q.query_id for q in corpus.queries}
        for ms in preds.values():
            scores = [m.score for m in ms]
            assert ms and scores == sorted(scores, reverse=True)

    def test_score_matches_report(self, fitted, corpus):
        report = fitted.evaluate(corpus)
        assert fitted.score(corpus) == report.value(1, 0.5)
        assert 0.0 <= fitted.score(corpus) <= 1.0

    def test_deterministic(self, corpus, fitted):
        again = MomentGrounder(epochs=2, T_w=64, seed=1).fit(corpus)
        for (n, a), (_, b) in zip(sorted(fitted.model_.state_dict().items()),
                                  sorted(again.model_.state_dict().items())):
            assert np.array_equal(a, b), n

    def test_width_mismatch(self, fitted):
        other = generate_synthetic_corpus(0, 1, (64, 64), (1, 1), 5, 8)
        with pytest.raises(CorpusError, match="width"):
            fitted.predict(other)

    @pytest.mark.parametrize("bad", [dict(fusion="concat"), dict(sampler="both"), dict(lr=0),
                                     dict(epochs=1.5), dict(bq=0), dict(T_w=-4)])
    def test_bad_params(self, corpus, bad):
        with pytest.raises(ValueError):
            MomentGrounder(**bad).fit(corpus)

    def test_rejects_non_corpus(self):
        with pytest.raises(TypeError):
            MomentGrounder().fit(np.zeros((4, 4)))


class TestValidation:
    def test_corpus_checks(self, corpus):
        assert check_corpus(corpus) is corpus
        with pytest.raises(CorpusError, match="no videos"):
            check_corpus(Corpus([], []))
        with pytest.raises(CorpusError, match="no queries"):
            check_corpus(Corpus(corpus.videos, []))
        assert check_corpus(Corpus(corpus.videos, []), require_queries=False)
        with pytest.raises(CorpusError):
            check_corpus(corpus, D_t=3)

    def test_non_finite_after_construction(self, corpus):
        broken = generate_synthetic_corpus(0, 1, (16, 16), (1, 1), 2, 2, moment_length_range=(2, 8))
        broken.videos[0].features[3, 1] = np.nan
        with pytest.raises(CorpusError, match=broken.videos[0].video_id):
            check_corpus(broken)

    def test_scalars(self):
        assert check_positive_int("n", np.int64(3)) == 3
        assert check_positive_float("x", 2) == 2.0
        for bad in (0, -1, True, 2.0, "3"):
            with pytest.raises(ValueError):
                check_positive_int("n", bad)
        for bad in (0, -0.5, float("nan"), True):
            with pytest.raises(ValueError):
                check_positive_float("x", bad)
        with pytest.raises(ValueError, match="one of"):
            check_choice("mode", "c", ("a", "b"))

    def test_lists(self):
        assert check_thresholds([0.7, 0.3, 0.3]) == (0.3, 0.7)
        assert check_ks([5, 1]) == (1, 5)
        for bad in ([], [0.0], [1.2]):
            with pytest.raises(ValueError):
                check_thresholds(bad)
        for bad in ([], [0]):
            with pytest.raises(ValueError):
                check_ks(bad)
