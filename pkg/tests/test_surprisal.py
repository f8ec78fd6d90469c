import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from scar.corpus import Dataset, Example
from scar.errors import ConfigError, DuplicateIdError, SchemaError
from scar.surprisal import (
    CmiSample,
    LmScore,
    UnigramLm,
    UnigramScorer,
    cmi,
    fit_unigram,
    load_cmi_samples,
    load_scores,
    perplexity,
    ppl_stats,
    unigram_score,
)


class TestPerplexity:
    def test_mean_nll_of_half(self):
        score = LmScore(id="s", logprob_sum=2 * math.log(0.5), token_count=2)
        assert perplexity(score) == pytest.approx(2.0, rel=1e-12)

    def test_certain_sequence(self):
        assert perplexity(LmScore(id="s", logprob_sum=0.0, token_count=5)) == 1.0

    def test_zero_count_rejected_at_construction(self):
        with pytest.raises(SchemaError):
            LmScore(id="s", logprob_sum=-1.0, token_count=0)

    def test_positive_logprob_rejected(self):
        with pytest.raises(SchemaError):
            LmScore(id="s", logprob_sum=0.5, token_count=1)

    @given(
        st.floats(min_value=-500.0, max_value=0.0),
        st.integers(min_value=1, max_value=1000),
    )
    def test_at_least_one(self, logprob, count):
        assert perplexity(LmScore(id="s", logprob_sum=logprob, token_count=count)) >= 1.0


def _corpus_of(text):
    return Dataset([Example(id="e0", instruction="inst", response=text)])


class TestUnigram:
    def test_smoothed_probability_of_seen_token(self):
        lm = fit_unigram(_corpus_of("alpha beta gamma delta epsilon zeta eta theta iota kappa"))
        assert lm.total == 10 and len(lm.vocab) == 10
        assert lm.prob("alpha") == pytest.approx(2 / 21, rel=1e-15)

    def test_unseen_token_probability(self):
        lm = fit_unigram(_corpus_of("alpha beta gamma delta epsilon zeta eta theta iota kappa"))
        assert lm.prob("omega") == pytest.approx(1 / 21, rel=1e-15)

    def test_refit_identical(self):
        ds = _corpus_of("one two two three")
        assert fit_unigram(ds) == fit_unigram(ds)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ConfigError):
            fit_unigram(Dataset([]))

    def test_probabilities_sum_to_one_with_unseen_bucket(self):
        lm = fit_unigram(_corpus_of("a a b c"))
        total = sum(lm.prob(t) for t in lm.vocab) + lm.prob("unseen-token")
        assert total == pytest.approx(1.0, rel=1e-12)

    def test_two_half_probability_tokens_give_ppl_two(self):
        # contrive counts so the smoothed probability is exactly 1/2
        lm = UnigramLm(vocab={"left": 1, "extra": 0}, total=1)
        assert lm.prob("left") == 0.5
        score = unigram_score(lm, "ignored context", "left left")
        assert perplexity(score) == pytest.approx(2.0, rel=1e-8)

    def test_smoothing_keeps_ppl_above_one(self):
        lm = fit_unigram(_corpus_of("word word word word"))
        score = unigram_score(lm, "", "word")
        assert perplexity(score) > 1.0

    def test_context_ignored_and_deterministic(self):
        lm = fit_unigram(_corpus_of("x y z"))
        a = unigram_score(lm, "context one", "x y")
        b = unigram_score(lm, "totally different", "x y")
        assert a == b

    def test_empty_target_rejected(self):
        lm = fit_unigram(_corpus_of("x"))
        with pytest.raises(ConfigError):
            unigram_score(lm, "", "   ")

    @given(
        st.lists(st.sampled_from(["ant", "bee", "cow", "dog"]), min_size=1, max_size=12),
        st.lists(st.sampled_from(["ant", "bee", "cow", "dog"]), min_size=1, max_size=12),
    )
    @settings(max_examples=200)
    def test_logprob_exactly_additive_over_concatenation(self, left, right):
        lm = fit_unigram(_corpus_of("ant bee cow dog ant bee cow"))
        joined = unigram_score(lm, "", " ".join(left + right))
        a = unigram_score(lm, "", " ".join(left))
        b = unigram_score(lm, "", " ".join(right))
        assert joined.logprob_sum == a.logprob_sum + b.logprob_sum
        assert joined.token_count == a.token_count + b.token_count

    def test_scorer_contract_wrapper(self):
        lm = fit_unigram(_corpus_of("p q r"))
        scorer = UnigramScorer(lm)
        lp, tc = scorer.score("ctx", "p q")
        assert tc == 2 and lp < 0


class TestLoadScores:
    def test_two_valid_lines(self, write_jsonl):
        path = write_jsonl(
            "s.jsonl",
            [
                {"id": "a", "logprob_sum": -1.5, "token_count": 3},
                {"id": "b", "logprob_sum": -0.25, "token_count": 1},
            ],
        )
        table = load_scores(path)
        assert set(table) == {"a", "b"}

    def test_positive_logprob_rejected(self, write_jsonl):
        path = write_jsonl("s.jsonl", [{"id": "a", "logprob_sum": 1.0, "token_count": 1}])
        with pytest.raises(SchemaError):
            load_scores(path)

    def test_missing_token_count(self, write_jsonl):
        path = write_jsonl("s.jsonl", [{"id": "a", "logprob_sum": -1.0}])
        with pytest.raises(SchemaError, match="token_count"):
            load_scores(path)

    def test_duplicate_id(self, write_jsonl):
        rows = [{"id": "a", "logprob_sum": -1.0, "token_count": 1}] * 2
        with pytest.raises(DuplicateIdError):
            load_scores(write_jsonl("s.jsonl", rows))

    def test_non_finite_rejected(self, tmp_path):
        path = tmp_path / "s.jsonl"
        path.write_text('{"id": "a", "logprob_sum": -1e999, "token_count": 1}\n')
        with pytest.raises(SchemaError):
            load_scores(path)


def _independent_samples():
    """Joint built as P(x|yp) P(yc|yp) P(yp): x independent of yc given yp.

    Probabilities are sixteenths so 16 weighted samples reproduce the joint
    exactly.
    """
    p_yp = {0: Fraction(1, 2), 1: Fraction(1, 2)}
    p_x_given_yp = {0: {0: Fraction(1, 2), 1: Fraction(1, 2)},
                    1: {0: Fraction(1, 4), 1: Fraction(3, 4)}}
    p_yc_given_yp = {0: {0: Fraction(1, 4), 1: Fraction(3, 4)},
                     1: {0: Fraction(1, 2), 1: Fraction(1, 2)}}
    samples = []
    for x in (0, 1):
        for yc in (0, 1):
            for yp in (0, 1):
                prob = p_yp[yp] * p_x_given_yp[yp][x] * p_yc_given_yp[yp][yc]
                weight = prob * 16
                assert weight.denominator == 1
                # conditionals for the estimator
                p_c_xp = p_yc_given_yp[yp][yc]  # independence: no x term
                p_c_p = p_yc_given_yp[yp][yc]
                joint_yp_yc = p_yp[yp] * p_yc_given_yp[yp][yc]
                p_p_c = _marginal_p_given_c(p_yp, p_yc_given_yp, yp, yc)
                p_p_xc = _p_given_xc(p_yp, p_x_given_yp, p_yc_given_yp, x, yc, yp)
                for _ in range(int(weight)):
                    samples.append(
                        CmiSample(
                            logp_c_given_xp=math.log(float(p_c_xp)),
                            logp_c_given_p=math.log(float(p_c_p)),
                            logp_p_given_xc=math.log(float(p_p_xc)),
                            logp_p_given_c=math.log(float(p_p_c)),
                        )
                    )
    return samples


def _marginal_p_given_c(p_yp, p_yc_given_yp, yp, yc):
    num = p_yp[yp] * p_yc_given_yp[yp][yc]
    den = sum(p_yp[v] * p_yc_given_yp[v][yc] for v in (0, 1))
    return num / den


def _p_given_xc(p_yp, p_x_given_yp, p_yc_given_yp, x, yc, yp):
    num = p_yp[yp] * p_x_given_yp[yp][x] * p_yc_given_yp[yp][yc]
    den = sum(
        p_yp[v] * p_x_given_yp[v][x] * p_yc_given_yp[v][yc] for v in (0, 1)
    )
    return num / den


class TestCmi:
    def test_equal_logprobs_give_zero(self):
        samples = [
            CmiSample(
                logp_c_given_xp=-1.0,
                logp_c_given_p=-1.0,
                logp_p_given_xc=-2.0,
                logp_p_given_c=-2.0,
            )
        ] * 3
        assert cmi(samples) == (0.0, 0.0)

    def test_single_sample_ln_two(self):
        sample = CmiSample(
            logp_c_given_xp=math.log(0.5),
            logp_c_given_p=math.log(0.25),
            logp_p_given_xc=math.log(0.5),
            logp_p_given_c=math.log(0.5),
        )
        i_semantic, i_form = cmi([sample])
        assert i_semantic == pytest.approx(math.log(2), rel=1e-12)
        assert i_form == 0.0

    def test_opposite_ratios_cancel(self):
        s1 = CmiSample(math.log(0.5), math.log(0.25), -1.0, -1.0)
        s2 = CmiSample(math.log(0.25), math.log(0.5), -1.0, -1.0)
        i_semantic, _ = cmi([s1, s2])
        assert i_semantic == pytest.approx(0.0, abs=1e-15)

    def test_independent_joint_gives_zero_semantic_cmi(self):
        i_semantic, _ = cmi(_independent_samples())
        assert abs(i_semantic) <= 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            cmi([])

    def test_load_samples(self, write_jsonl):
        path = write_jsonl(
            "cmi.jsonl",
            [
                {
                    "logp_c_given_xp": -0.5,
                    "logp_c_given_p": -0.7,
                    "logp_p_given_xc": -1.0,
                    "logp_p_given_c": -1.0,
                }
            ],
        )
        samples = load_cmi_samples(path)
        assert len(samples) == 1
        i_semantic, i_form = cmi(samples)
        assert i_semantic == pytest.approx(0.2, abs=1e-12)
        assert i_form == 0.0


class TestPplStats:
    def test_single_score(self):
        mean, std = ppl_stats([LmScore(id="a", logprob_sum=-1.0, token_count=1)])
        assert std == 0.0

    def test_hand_values(self):
        scores = [
            LmScore(id="a", logprob_sum=-math.log(2.0), token_count=1),
            LmScore(id="b", logprob_sum=-math.log(4.0), token_count=1),
        ]
        mean, std = ppl_stats(scores)
        assert mean == pytest.approx(3.0, rel=1e-12)
        assert std == pytest.approx(1.0, rel=1e-12)

    def test_permutation_invariant(self):
        scores = [
            LmScore(id=c, logprob_sum=-float(i + 1), token_count=2)
            for i, c in enumerate("abc")
        ]
        assert ppl_stats(scores) == ppl_stats(list(reversed(scores)))

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            ppl_stats([])
