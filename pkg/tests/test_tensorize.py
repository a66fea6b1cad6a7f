import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from encmine.capture import synth_pcap
from encmine.corpus import random_encrypted_session
from encmine.errors import EmptyInput, ManifestMismatch, ShapeError
from encmine.features import load_manifest
from encmine.pipeline import extract_records
from encmine.tensorize import (Scaler, TensorBundle, bundle_to_json, dumps_bundles, fit_scaler, gram_square,
                               loads_bundles, raw_block, tensorize, truncate_and_pad)

MANIFEST = load_manifest()


@pytest.fixture(scope="module")
def records():
    rng = np.random.default_rng(12)
    specs = [random_encrypted_session(rng, i) for i in range(10)]
    return extract_records(synth_pcap(specs), "t", manifest=MANIFEST)


def test_padding_example():
    assert truncate_and_pad([[2], [4]], 4).tolist() == [[2], [4], [3], [3]]


def test_truncation_keeps_first_rows():
    m = np.arange(40.0).reshape(20, 2)
    assert np.array_equal(truncate_and_pad(m), m[:15])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 15), st.integers(1, 6)),
              elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_padding_preserves_column_means(m):
    out = truncate_and_pad(m)
    assert out.shape == (15, m.shape[1])
    assert np.allclose(out.mean(axis=0), m.mean(axis=0), rtol=1e-12, atol=1e-12 * (1 + np.abs(m).max()))
    assert np.array_equal(out[:len(m)], m)


def test_padding_rejects_empty():
    with pytest.raises(EmptyInput):
        truncate_and_pad(np.zeros((0, 3)))


def test_gram_square_properties_and_shape_check():
    rng = np.random.default_rng(1)
    x = rng.random((15, 38))
    g = gram_square(x)
    assert g.shape == (38, 38) and np.array_equal(g, g.T)
    assert np.linalg.eigvalsh(g).min() >= -1e-9
    with pytest.raises(ShapeError):
        gram_square(np.zeros((38, 15)))


def test_scaler_bounds_clamp_and_constant_features():
    s = Scaler({"a": (0.0, 10.0), "b": (3.0, 3.0)})
    assert s.apply_scaler(5.0, "a") == pytest.approx(0.5)
    assert s.apply_scaler(-4.0, "a") == 0.0 and s.apply_scaler(40.0, "a") == 1.0
    assert s.apply_scaler(99.0, "b") == 0.0
    assert Scaler(identity=True).apply_scaler(7.5, "z") == 7.5
    with pytest.raises(ManifestMismatch):
        s.apply_scaler(1.0, "missing")
    assert Scaler.from_mapping(s.to_mapping()) == s and s.digest == Scaler.from_mapping(s.to_mapping()).digest


def test_tensorized_training_data_lies_in_unit_interval(records):
    scaler = fit_scaler(records, MANIFEST)
    for r in records:
        b = tensorize(r, scaler, MANIFEST)
        assert b.time_matrix.shape == (15, 85) and b.image_matrix.shape == (15, 38)
        assert b.square_matrix.shape == (38, 38) and b.ratio_vector.shape == (65,)
        for m in (b.time_matrix, b.image_matrix, b.ratio_vector):
            assert m.min() >= 0.0 and m.max() <= 1.0
        assert np.allclose(b.square_matrix, b.image_matrix.T @ b.image_matrix, atol=1e-12)
        assert b.manifest_version == MANIFEST.version


def test_scopes_are_padded_separately(records):
    r = next(r for r in records if r.n_enc_packets < 15 and r.n_packets != r.n_enc_packets)
    names = list(MANIFEST.payload_feature_list)
    block = raw_block(r, names)
    j = names.index("enc_payload_length")
    enc = np.array(r.packet_series["enc"]["enc_payload_length"])
    assert block[:len(enc), j].tolist() == enc.tolist()
    assert block[len(enc):, j] == pytest.approx(enc.mean())


def test_manifest_mismatch(records):
    scaler = fit_scaler(records, MANIFEST)
    with pytest.raises(ManifestMismatch):
        tensorize(replace(records[0], manifest_version="other"), scaler, MANIFEST)
    broken = replace(records[0], ratio_features={})
    with pytest.raises(ManifestMismatch):
        tensorize(broken, scaler, MANIFEST)


def test_bundle_file_roundtrip(records):
    scaler = fit_scaler(records, MANIFEST)
    bundles = [tensorize(r, scaler, MANIFEST) for r in records]
    bundles[0].label = 1
    data = dumps_bundles(bundles, {"p": 1})
    back, prov = loads_bundles(data)
    assert prov == {"p": 1} and len(back) == len(bundles)
    for a, b in zip(bundles, back):
        assert bundle_to_json(a) == bundle_to_json(b)
    assert dumps_bundles(back, prov) == data


def test_bundle_validation():
    ok = TensorBundle(np.zeros((15, 85)), np.zeros((15, 38)), np.zeros((38, 38)), np.zeros(65))
    ok.validate(65)
    with pytest.raises(ShapeError):
        TensorBundle(np.zeros((14, 85)), ok.image_matrix, ok.square_matrix, ok.ratio_vector).validate()
    with pytest.raises(ShapeError):
        ok.validate(64)
