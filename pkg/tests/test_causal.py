import math

import numpy as np
import pytest

from latent_recourse.autodiff import grad_check
from latent_recourse import autodiff as ad
from latent_recourse.causal import (CausalDecisionModel, causal_elbo_terms, estimate_ate, full_batch_loss,
                                    infer_z, predict_outcome_do, train_causal)
from latent_recourse.errors import ContractError
from latent_recourse.genmodel import reconstruction_nll
from latent_recourse.synth import synth_causal


@pytest.fixture(scope="module")
def rct():
    ds = synth_causal(3000, tau=0.2, seed=11)
    return ds.split(seed=11)


@pytest.fixture(scope="module")
def rct_model(rct):
    return train_causal(rct[0], epochs=15, seed=0)


def _zero_model(ds):
    m = CausalDecisionModel.build(ds.schema, ds.encoder, 2, np.random.default_rng(0), hidden=(4, 4))
    for p in m.parameters():
        p.data[...] = 0.0
    return m


def test_zero_treatment_head_nll_is_ln2(rct):
    ds = rct[1]
    m = _zero_model(ds)
    _, parts = causal_elbo_terms(m, ds.X[:7], ds.t[:7], ds.y[:7], np.zeros((7, 2)))
    assert np.allclose(parts["nll_t"], math.log(2.0), atol=1e-15)
    assert np.allclose(parts["kl"], 0.0)


def test_kl_component_closed_form(rct):
    ds = rct[1]
    m = _zero_model(ds)
    # bias the inference head so mu = 1 in the first latent dimension, logvar = 0
    m.inference_net.layers[-1].bias.data[0] = 1.0
    _, parts = causal_elbo_terms(m, ds.X[:3], ds.t[:3], ds.y[:3], np.zeros((3, 2)))
    assert np.allclose(parts["kl"], 0.5, atol=1e-15)


def test_non_binary_treatment_rejected(rct):
    ds = rct[1]
    m = _zero_model(ds)
    with pytest.raises(ContractError):
        causal_elbo_terms(m, ds.X[:2], [0, 2], [0, 1], np.zeros((2, 2)))


def test_zero_outcome_heads_half(rct):
    ds = rct[1]
    m = _zero_model(ds)
    z = np.random.default_rng(0).normal(size=(4, 2))
    for t in (0, 1):
        assert np.array_equal(predict_outcome_do(m, z, ds.X[:4], t), np.full(4, 0.5))
    mu, lv = infer_z(m, ds.X[:4], ds.t[:4], ds.y[:4])
    assert np.array_equal(mu, np.zeros((4, 2))) and np.array_equal(lv, np.zeros((4, 2)))


def test_identical_heads_zero_effect(rct_model, rct):
    m = rct_model
    same = CausalDecisionModel(m.schema, m.encoder, m.latent_dim, m.inference_net, m.dec_net,
                               m.treatment_net, [m.outcome_nets[1], m.outcome_nets[1]])
    z = np.random.default_rng(1).normal(size=(20, 2))
    x = rct[1].X[:20]
    assert np.array_equal(predict_outcome_do(same, z, x, 0), predict_outcome_do(same, z, x, 1))
    assert estimate_ate(same, rct[1]) == 0.0


def test_intervention_invariance(rct_model, rct):
    """Changing the factual t moves z but the do() head is fixed by its argument."""
    ds = rct[1]
    mu0, _ = infer_z(rct_model, ds.X[:10], np.zeros(10), ds.y[:10])
    mu1, _ = infer_z(rct_model, ds.X[:10], np.ones(10), ds.y[:10])
    assert not np.array_equal(mu0, mu1)
    p = predict_outcome_do(rct_model, mu0, ds.X[:10], 1)
    again = rct_model.outcome_prob_t(mu0, ds.X[:10], 1).data[:, 0]
    assert np.array_equal(p, again)


def test_infer_z_deterministic(rct_model, rct):
    ds = rct[1]
    a = infer_z(rct_model, ds.X, ds.t, ds.y)[0]
    b = infer_z(rct_model, ds.X, ds.t, ds.y)[0]
    assert np.array_equal(a, b)


def test_inferred_z_reconstructs_better_than_prior(rct_model, rct):
    ds = rct[2]
    mu, _ = infer_z(rct_model, ds.X, ds.t, ds.y)
    z_rand = np.random.default_rng(3).standard_normal(mu.shape)
    nll_mu = reconstruction_nll(rct_model.layout, rct_model.head_params_t(mu, ds.X), ds.X).data.mean()
    nll_rand = reconstruction_nll(rct_model.layout, rct_model.head_params_t(z_rand, ds.X), ds.X).data.mean()
    assert nll_mu < nll_rand


def test_immutable_t_or_y_rejected(rct):
    with pytest.raises(ContractError):
        train_causal(rct[0], immutable=["t"], epochs=1)


def test_immutable_columns_have_no_heads():
    ds = synth_causal(400, seed=2)
    names = ds.schema.names[:2]
    m = train_causal(ds, immutable=names, epochs=1, seed=0)
    assert set(m.immutable) >= set(names)
    assert not {ds.schema.index(n) for n in names} & set(m.layout.recon_idx)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_full_batch_loss_decreases(seed):
    ds = synth_causal(800, seed=seed + 20)
    before = train_causal(ds, epochs=0, seed=seed)
    after = train_causal(ds, epochs=6, seed=seed)
    assert full_batch_loss(after, ds) < full_batch_loss(before, ds)


def test_uplift_in_range(rct_model, rct):
    ate = estimate_ate(rct_model, rct[2])
    truth = rct[2].truth.ate
    assert 0.1 <= ate <= 0.3
    assert abs(ate - truth) <= 0.1


def test_causal_gradient_paths(rct):
    ds = rct[1]
    m = CausalDecisionModel.build(ds.schema, ds.encoder, 2, np.random.default_rng(5), hidden=(3, 3))
    x = ds.X[:2]

    def heads(z):
        return ad.concat([m.decode_soft(z, x), m.treatment_logit_t(z, x), m.outcome_logit_t(z, x, 0),
                          m.outcome_logit_t(z, x, 1)])

    rep = grad_check(heads, lambda rng: [rng.uniform(-2, 2, size=(2, 2))], n_points=20, seed=1)
    assert rep.passed, str(rep)


def test_training_deterministic(rct):
    small = rct[0].subset(np.arange(200))
    a = train_causal(small, epochs=2, seed=3)
    b = train_causal(small, epochs=2, seed=3)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert np.array_equal(pa.data, pb.data)


def test_bad_intervention(rct_model):
    with pytest.raises(ContractError):
        predict_outcome_do(rct_model, np.zeros((1, 2)), None, 2)
