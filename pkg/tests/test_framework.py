from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from encmine.corpus import labelled_corpus
from encmine.errors import (DegenerateLabels, ModelError, RangeError, ShapeError, TooFewRecords,
                            VersionMismatch)
from encmine.evaluation import evaluate
from encmine.features import load_manifest
from encmine.framework import (BRANCHES, FrameworkConfig, ablation_means, check_no_leakage, dumps_framework,
                               enc_derived, layer2_average, loads_framework, predict_bundles, predict_session,
                               stratified_folds, train_framework)
from encmine.pipeline import records_from_specs
from encmine.tensorize import tensorize

MANIFEST = load_manifest()

FAST = {
    "branches": {
        "time": {"params": {"hidden": 4, "epochs": 3}},
        "image": {"params": {"channels": [2], "epochs": 2}},
        "ratio": {"params": {"n_estimators": 10}},
    },
    "layer2_params": {"n_estimators": 10},
    "stacking_folds": 3,
}


def fast(**kw):
    return FrameworkConfig.from_mapping({**FAST, **kw})


@pytest.fixture(scope="module")
def records():
    return records_from_specs(labelled_corpus("enc_signal", 24, seed=3), manifest=MANIFEST)


@pytest.fixture(scope="module")
def rf_model(records):
    return train_framework(records, fast(), MANIFEST)


@pytest.fixture(scope="module")
def avg_model(records):
    return train_framework(records, fast(layer2="average_ensemble"), MANIFEST)


# -- layer-2 averaging ------------------------------------------------------------

def test_average_tie_goes_to_malicious():
    mean, verdict = layer2_average([0.2, 0.4, 0.9])
    assert mean == pytest.approx(0.5) and verdict


def test_average_extremes():
    assert layer2_average([1, 1, 1]) == (1.0, True)
    assert layer2_average([0, 0, 0]) == (0.0, False)


def test_average_rejects_bad_input():
    with pytest.raises(RangeError):
        layer2_average([0.2, 1.2, 0.1])
    with pytest.raises(ShapeError):
        layer2_average([0.2, 0.3])


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_average_lies_between_branch_extremes(p):
    mean, _ = layer2_average(p)
    assert min(p) <= mean <= max(p)


# -- config ---------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        FrameworkConfig(stacking_folds=1)
    with pytest.raises(ValueError):
        FrameworkConfig(decision_threshold=1.0)
    with pytest.raises(ValueError):
        FrameworkConfig.from_mapping({"branches": {"time": {"view": "ratio"}}})


def test_config_round_trip():
    cfg = fast(seed=7)
    assert FrameworkConfig.from_mapping(cfg.to_mapping()) == cfg


def test_changing_branch_kind_drops_old_params():
    cfg = FrameworkConfig.from_mapping({"branches": {"ratio": {"kind": "random_forest"}}})
    assert cfg.branches["ratio"].params == {}


# -- stacking -------------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.integers(3, 40), st.integers(3, 40), st.integers(2, 5), st.integers(0, 99))
def test_folds_are_stratified(n0, n1, k, seed):
    y = np.array([0] * n0 + [1] * n1)
    folds = stratified_folds(y, k, seed)
    for cls in (0, 1):
        counts = np.bincount(folds[y == cls], minlength=k)
        assert counts.max() - counts.min() <= 1


def test_stacking_log_is_out_of_fold(rf_model):
    log = rf_model.report["stacking_log"]
    check_no_leakage(log)
    seen = sorted(r for m in log["models"] for r in m["predicted_rows"])
    assert seen == list(range(len(log["row_fold"])))


def test_leak_check_fires():
    log = {"row_fold": [0, 1], "models": [{"fold": 0, "train_folds": [0, 1], "predicted_rows": [0]}]}
    with pytest.raises(AssertionError):
        check_no_leakage(log)
    log = {"row_fold": [0, 1], "models": [{"fold": 0, "train_folds": [1], "predicted_rows": [1]}]}
    with pytest.raises(AssertionError):
        check_no_leakage(log)


# -- training -------------------------------------------------------------------

def test_average_ensemble_has_no_layer2_state(avg_model):
    assert avg_model.layer2 is None
    assert "stacking_log" not in avg_model.report


def test_average_probability_example(avg_model, records):
    b = tensorize(records[0], avg_model.scaler, MANIFEST)
    p = predict_bundles(avg_model, [b])[0]
    assert p.probability == pytest.approx(np.mean([p.branch_probabilities[n] for n in BRANCHES]))


def test_single_class_is_rejected(records):
    benign = [r for r in records if r.label == "benign"]
    with pytest.raises(DegenerateLabels):
        train_framework(benign, fast(), MANIFEST)


def test_too_few_records(records):
    with pytest.raises(TooFewRecords):
        train_framework(records[:5], fast(), MANIFEST)


def test_unlabelled_records_are_rejected(records):
    bad = [replace(records[0], label=None)] + list(records[1:])
    with pytest.raises(DegenerateLabels):
        train_framework(bad, fast(), MANIFEST)


def test_retraining_is_byte_identical(records, rf_model):
    again = train_framework(list(reversed(records)), fast(), MANIFEST)
    assert dumps_framework(again) == dumps_framework(rf_model)


def test_container_round_trip(rf_model, records):
    data = dumps_framework(rf_model)
    back = loads_framework(data)
    assert dumps_framework(back) == data
    bundles = [tensorize(r, rf_model.scaler, MANIFEST) for r in records]
    a = predict_bundles(rf_model, bundles)
    b = predict_bundles(back, bundles)
    assert [p.probability for p in a] == [p.probability for p in b]


def test_container_detects_corruption(rf_model):
    data = bytearray(dumps_framework(rf_model))
    data[len(data) // 2] ^= 0xFF
    with pytest.raises(ModelError):
        loads_framework(bytes(data))


def test_manifest_mismatch(rf_model, records):
    b = replace(tensorize(records[0], rf_model.scaler, MANIFEST), manifest_version="other")
    with pytest.raises(VersionMismatch):
        predict_session(rf_model, b)


def test_overfit_framework_flags_training_malicious(records):
    cfg = FrameworkConfig.from_mapping({
        "branches": {"time": {"params": {"hidden": 8, "epochs": 60}},
                     "image": {"params": {"channels": [4], "epochs": 40}},
                     "ratio": {"params": {"n_estimators": 50}}},
        "layer2_params": {"n_estimators": 50}, "stacking_folds": 3})
    model = train_framework(records, cfg, MANIFEST)
    mal = [r for r in records if r.label == "malicious"]
    for r in mal:
        verdict, prob, branches = predict_session(model, tensorize(r, model.scaler, MANIFEST))
        assert verdict == "malicious" and set(branches) == set(BRANCHES)


# -- ablation -------------------------------------------------------------------

def test_enc_derived_columns():
    assert enc_derived("enc_pkt_len_mean") and enc_derived("since_last_enc")
    assert not enc_derived("pkt_len_mean")


def test_ablation_fixes_enc_columns_and_keeps_shapes(records):
    cfg = fast(layer2="average_ensemble", ablate_enc=True)
    model = train_framework(records, cfg, MANIFEST)
    assert model.ablation is not None
    bundles = [tensorize(r, model.scaler, MANIFEST) for r in records]
    means = ablation_means(bundles, MANIFEST)
    assert np.allclose(means["ratio"], model.ablation["ratio"])
    preds = predict_bundles(model, bundles)
    assert len(preds) == len(bundles)
    # identical enc-derived inputs everywhere: the ratio branch sees one constant row
    ratio = [p.branch_probabilities["ratio"] for p in preds]
    assert max(ratio) == min(ratio)


@pytest.fixture(scope="module")
def tail_split():
    recs = records_from_specs(labelled_corpus("tail_signal", 240, seed=9), manifest=MANIFEST)
    recs = sorted(recs, key=lambda r: r.session_id)
    return recs[:160], recs[160:]


@pytest.mark.slow
@pytest.mark.parametrize("layer2", ["random_forest", "average_ensemble"])
def test_framework_tracks_the_informative_branch(tail_split, layer2):
    """Only the ratio vector sees the tail signal; layer 2 must not lose it."""
    train, test = tail_split
    model = train_framework(train, FrameworkConfig(layer2=layer2), MANIFEST)
    preds = predict_bundles(model, [tensorize(r, model.scaler, MANIFEST) for r in test])
    y = [r.label for r in test]
    fw = evaluate(y, [p.probability for p in preds]).accuracy
    best = max(evaluate(y, [p.branch_probabilities[n] for p in preds]).accuracy for n in BRANCHES)
    assert fw >= best - 0.02
