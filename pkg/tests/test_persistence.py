import numpy as np
import pytest

from latent_recourse.causal import infer_z, predict_outcome_do, train_causal
from latent_recourse.errors import DataError, UnsupportedVersionError
from latent_recourse.nn import predict_proba
from latent_recourse.persistence import dumps, load_model, loads, save_model
from latent_recourse.schema import AttributeSchema
from latent_recourse.synth import synth_causal


def test_classifier_round_trip_bit_exact(tmp_path, small_models, small_split, rng):
    clf, _ = small_models
    train = small_split[0]
    save_model(clf, tmp_path / "c.model", train.schema, train.encoder)
    pm = load_model(tmp_path / "c.model", "classifier", train.schema)
    x = rng.normal(size=(100, train.X.shape[1]))
    assert np.array_equal(predict_proba(clf, x), predict_proba(pm.model, x))
    assert np.array_equal(pm.encoder.mean, train.encoder.mean)
    assert np.array_equal(pm.encoder.raw_mad, train.encoder.raw_mad)


def test_vae_round_trip_bit_exact(tmp_path, small_models, rng):
    _, vae = small_models
    save_model(vae, tmp_path / "v.model")
    back = load_model(tmp_path / "v.model", "vae").model
    x = rng.normal(size=(100, vae.schema.encoded_width))
    z = rng.normal(size=(100, vae.latent_dim))
    assert np.array_equal(vae.encode(x)[0], back.encode(x)[0])
    assert np.array_equal(vae.decode_soft(z, x).data, back.decode_soft(z, x).data)
    assert back.conditional == vae.conditional


def test_causal_round_trip_bit_exact(tmp_path, rng):
    ds = synth_causal(300, seed=1)
    m = train_causal(ds, epochs=2, seed=0)
    save_model(m, tmp_path / "m.model")
    back = load_model(tmp_path / "m.model", "causal").model
    mu_a, _ = infer_z(m, ds.X, ds.t, ds.y)
    mu_b, _ = infer_z(back, ds.X, ds.t, ds.y)
    assert np.array_equal(mu_a, mu_b)
    z = rng.normal(size=(100, 2))
    for t in (0, 1):
        assert np.array_equal(predict_outcome_do(m, z, ds.X[:100], t), predict_outcome_do(back, z, ds.X[:100], t))


def test_dumps_is_stable(small_models):
    _, vae = small_models
    text = dumps(vae)
    assert dumps(loads(text).model) == text


def test_truncated_file_reports_byte_offset(small_models):
    _, vae = small_models
    text = dumps(vae)
    cut = text[: len(text) // 2]
    cut = cut[: cut.rfind("\n") + 1]
    with pytest.raises(DataError, match=r"byte \d+") as info:
        loads(cut)
    offset = int(str(info.value).split("byte ")[1].split(":")[0])
    assert offset == len(cut.encode("utf-8"))


def test_malformed_number_offset(small_models):
    _, vae = small_models
    lines = dumps(vae).split("\n")
    i = next(k for k, ln in enumerate(lines) if ln.startswith("layer")) + 1
    lines[i] = lines[i].replace(" ", " x", 1)
    with pytest.raises(DataError) as info:
        loads("\n".join(lines))
    expected = sum(len(ln) + 1 for ln in lines[:i])
    assert f"byte {expected}" in str(info.value)


def test_version_two_rejected(small_models):
    _, vae = small_models
    text = dumps(vae).replace("REVISE-MODEL v1", "REVISE-MODEL v2", 1)
    with pytest.raises(UnsupportedVersionError, match="unsupported version"):
        loads(text)


def test_not_a_model_file():
    with pytest.raises(DataError):
        loads("hello\n")


def test_kind_and_schema_checks(tmp_path, small_models):
    _, vae = small_models
    save_model(vae, tmp_path / "v.model")
    with pytest.raises(DataError, match="expected a classifier"):
        load_model(tmp_path / "v.model", "classifier")
    other = AttributeSchema.from_text("x real mutable\n")
    with pytest.raises(DataError, match="schema mismatch"):
        load_model(tmp_path / "v.model", schema=other)


def test_classifier_needs_schema(small_models):
    clf, _ = small_models
    with pytest.raises(DataError):
        dumps(clf)


def test_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_model(tmp_path / "nope.model")


def test_values_written_with_17_digits(small_models):
    _, vae = small_models
    text = dumps(vae)
    w = vae.enc_net.layers[0].weight.data.ravel()
    assert ("%.17g" % w[0]) in text
