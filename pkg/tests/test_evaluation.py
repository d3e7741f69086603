import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointse.errors import InvalidInputError
from jointse.evaluation import (ComparisonPlan, SeMetrics, WerResult, activation_systems,
                                corpus_cer, corpus_wer, edit_distance, format_report,
                                gamma_systems, se_metrics, si_snr, table2_systems, wer)

from oracles import enumerate_alignments

words = st.lists(st.sampled_from("abc"), max_size=6)


def test_wer_examples():
    r = wer("a b c", "a x c")
    assert (r.substitutions, r.deletions, r.insertions) == (1, 0, 0)
    assert r.wer == pytest.approx(1 / 3)
    assert wer("a", "a b c").wer == 2.0
    assert wer("abc", "").deletions == 3
    assert wer("abc", "abc").wer == 0.0


def test_empty_reference_rejected():
    with pytest.raises(InvalidInputError):
        wer("", "a")
    with pytest.raises(InvalidInputError):
        corpus_wer(["a"], [])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from("abc"), min_size=1, max_size=5), words)
def test_counts_follow_the_documented_tie_rule(ref, hyp):
    # lexicographic minimum over every monotone alignment of (cost, -subs, -ins)
    best = min(enumerate_alignments(ref, hyp), key=lambda a: (a[0], -a[1], -a[2]))
    r = wer(ref, hyp)
    assert (r.errors, r.substitutions, r.insertions, r.deletions) == best


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from("abc"), min_size=1, max_size=6),
       st.lists(st.sampled_from("abc"), min_size=1, max_size=6))
def test_swap_symmetry(a, b):
    x, y = wer(a, b), wer(b, a)
    assert x.errors == y.errors
    assert x.substitutions == y.substitutions
    assert (x.insertions, x.deletions) == (y.deletions, y.insertions)


def test_corpus_rates_pool_counts():
    total = corpus_wer(["ab", "cde"], ["ab", "c"])
    assert total == WerResult(0, 2, 0, 5)
    assert corpus_cer(["ab", "cde"], ["ab", None]) == pytest.approx(3 / 5)
    assert edit_distance("", "ab") == 2


def test_si_snr_examples(rng):
    s = rng.standard_normal(1000)
    assert si_snr(s, s) == 60.0
    assert si_snr(3.0 * s, s) == 60.0
    n = rng.standard_normal(1000)
    n -= (n @ s) / (s @ s) * s  # orthogonal residual
    n *= np.sqrt((s @ s) / (n @ n)) / np.sqrt(10.0)
    assert si_snr(s + n, s) == pytest.approx(10.0, abs=1e-9)
    assert si_snr(2.5 * (s + n), s) == pytest.approx(10.0, abs=1e-9)
    with pytest.raises(InvalidInputError):
        si_snr(s, np.zeros(1000))
    with pytest.raises(InvalidInputError):
        si_snr(s, s[:10])


def test_se_metrics_bundle(rng):
    s = rng.standard_normal(200)
    m = se_metrics(np.ones((2, 3)), np.zeros((2, 3)), s, s)
    assert m == SeMetrics(1.0, 60.0)
    with pytest.raises(InvalidInputError):
        SeMetrics(np.nan, 0.0)


def test_system_matrix_matches_the_experiment_layout():
    specs = {s.key: s.overrides for s in table2_systems()}
    assert list(specs) == ["S1", "S2", "S3", "S4", "S5", "S6", "S7"]
    assert specs["S2"]["train.speed_perturb"] is True
    assert specs["S5"]["se.phase"] == "discard"
    assert specs["S7"]["train.mode"] == "dc-mtjl" and specs["S7"]["weights.gamma"] == 0.7
    assert [s.overrides["weights.gamma"] for s in gamma_systems()] == [0.3, 0.4, 0.5, 0.6, 0.7]
    assert [s.overrides["se.mask_activation"] for s in activation_systems()] == ["relu", "mish", "metaacon"]


def test_plan_parsing():
    plan = ComparisonPlan.from_flat({"plan.systems": "S1, S7", "plan.gammas": "0.5",
                                     "plan.activations": "", "train.steps": "3"})
    assert [s.key for s in plan.specs()] == ["S1", "S7", "gamma=0.5"]
    assert plan.base == {"train.steps": "3"}
    with pytest.raises(InvalidInputError):
        ComparisonPlan.from_flat({"plan.bogus": 1})
    with pytest.raises(InvalidInputError):
        ComparisonPlan.from_flat({"plan.systems": "S9"}).specs()


def test_report_is_labelled_synthetic():
    report = {"note": "Synthetic-corpus CER, not comparable.", "rows": [
        {"key": "S1", "label": "Baseline", "table": "systems", "cer": 0.25, "steps": 10},
        {"key": "gamma=0.3", "label": "DC, g=0.3", "table": "gamma", "cer": 0.125, "steps": 10}]}
    text = format_report(report)
    assert text.startswith("Synthetic")
    assert "25.00" in text and "12.50" in text
    assert "activation" not in text.lower()
