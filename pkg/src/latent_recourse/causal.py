"""Conditional latent-variable causal decision model.

Generative side, all conditioned on the immutable attributes x_I:
``p(x_M | z, x_I)`` (heterogeneous heads), ``p(t | z, x_I)`` and one
Bernoulli outcome head per treatment value. Intervening with do(t)
selects the outcome head; it never touches the inferred z.
Inference network: ``q(z | x, t, y)``.
"""

import logging

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, backward
from .errors import ContractError, DataError, NumericError, ShapeError
from .genmodel import (AttributeDecoder, kl_standard_normal, reconstruction_nll, reparam_sample,
                       soft_clamp)
from .nn import DenseNetwork, bce_with_logits
from .optim import AdamState, adam_step
from .schema import with_roles

log = logging.getLogger(__name__)


class CausalDecisionModel(AttributeDecoder):
    def __init__(self, schema, encoder, latent_dim, inference_net, dec_net, treatment_net,
                 outcome_nets):
        conditional = bool(schema.immutable_idx)
        self._init_decoder(schema, encoder, latent_dim, dec_net, conditional)
        self.inference_net = inference_net
        self.treatment_net = treatment_net
        if len(outcome_nets) != 2:
            raise ContractError("need exactly two outcome heads (t = 0 and t = 1)")
        self.outcome_nets = tuple(outcome_nets)
        if inference_net.input_dim != schema.encoded_width + 2:
            raise ShapeError("inference network input must be encoded x plus t and y")
        if inference_net.output_dim != 2 * latent_dim:
            raise ShapeError("inference network must output 2 * latent_dim values")

    @classmethod
    def build(cls, schema, encoder, latent_dim, rng, hidden=(32, 32)):
        conditional = bool(schema.immutable_idx)
        n_cond = len(schema.encoded_columns(schema.immutable_idx))
        acts = ["tanh"] * len(hidden) + ["identity"]
        inf = DenseNetwork.build([schema.encoded_width + 2, *hidden, 2 * latent_dim], acts, rng)
        dec = cls._build_decoder(schema, latent_dim, rng, hidden, conditional)
        head_in = latent_dim + n_cond
        tnet = DenseNetwork.build([head_in, hidden[-1], 1], ["tanh", "identity"], rng)
        ynets = [DenseNetwork.build([head_in, hidden[-1], 1], ["tanh", "identity"], rng)
                 for _ in range(2)]
        return cls(schema, encoder, latent_dim, inf, dec, tnet, ynets)

    @property
    def immutable(self):
        return tuple(self.schema.features[i].name for i in self.schema.immutable_idx)

    def parameters(self):
        out = self.inference_net.parameters() + self.dec_net.parameters()
        out += self.treatment_net.parameters()
        for net in self.outcome_nets:
            out += net.parameters()
        return out

    # ------------------------------------------------------------ inference

    def infer_t(self, x, t, y):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.schema.encoded_width:
            raise ShapeError(f"infer_z: expected encoded width {self.schema.encoded_width}")
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (len(x),))
        y = np.broadcast_to(np.asarray(y, dtype=np.float64), (len(x),))
        out = self.inference_net.forward(np.column_stack([x, t, y]))
        k = self.latent_dim
        return ad.take_cols(out, slice(0, k)), soft_clamp(ad.take_cols(out, slice(k, 2 * k)))

    # ------------------------------------------------------------ heads

    def treatment_logit_t(self, z, x_ref=None):
        return self.treatment_net.forward(self._decoder_input(z, x_ref))

    def outcome_logit_t(self, z, x_ref, do_t):
        if do_t not in (0, 1):
            raise ContractError("intervention must be do(t=0) or do(t=1)")
        return self.outcome_nets[do_t].forward(self._decoder_input(z, x_ref))

    def outcome_prob_t(self, z, x_ref, do_t):
        return ad.sigmoid(self.outcome_logit_t(z, x_ref, do_t))


def _check_binary(v, name):
    v = np.asarray(v)
    if not np.all(np.isin(v, (0, 1))):
        raise ContractError(f"{name} must be binary (0/1)")
    return v.astype(np.float64)


def infer_z(model, x, t, y):
    """Posterior (mean, log-variance) of the confounder given the factual triple."""
    mu, lv = model.infer_t(x, _check_binary(t, "t"), _check_binary(y, "y"))
    return mu.data, lv.data


def predict_outcome_do(model, z, x_ref, do_t):
    """p(y = 1 | do(t), z, x_I); a pure function of (z, x_I, do_t)."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    return model.outcome_prob_t(z, x_ref, do_t).data[:, 0]


def causal_elbo_terms(model, x, t, y, noise):
    """Per-row NLL pieces and KL; returns (loss, dict of per-row arrays)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    t = _check_binary(t, "t")
    y = _check_binary(y, "y")
    mu, lv = model.infer_t(x, t, y)
    z = reparam_sample(mu, lv, noise)
    params = model.head_params_t(z, x)
    nll_x = reconstruction_nll(model.layout, params, x)
    t_logit = ad.take_cols(model.treatment_logit_t(z, x), [0])
    nll_t = ad.sum_(bce_with_logits(t_logit, t[:, None]), axis=1)
    l0 = model.outcome_logit_t(z, x, 0)
    l1 = model.outcome_logit_t(z, x, 1)
    y_logit = ad.add(ad.mul(l1, t[:, None]), ad.mul(l0, 1.0 - t[:, None]))
    nll_y = ad.sum_(bce_with_logits(y_logit, y[:, None]), axis=1)
    kl = kl_standard_normal(mu, lv)
    loss = ad.mean(ad.add_n([nll_x, nll_t, nll_y, kl]))
    if not np.isfinite(loss.data):
        raise NumericError("non-finite causal ELBO")
    return loss, {"nll_x": nll_x.data, "nll_t": nll_t.data, "nll_y": nll_y.data, "kl": kl.data}


def causal_elbo(model, x, t, y, noise):
    return causal_elbo_terms(model, x, t, y, noise)[0]


def train_causal(dataset, immutable=None, latent_dim=2, epochs=40, seed=0, hidden=(32, 32),
                 batch_size=128, lr=3e-3, history=None):
    """Fit the conditional causal model by Adam on the negative ELBO.

    ``immutable`` (attribute names) overrides the schema's immutable set;
    naming the treatment or outcome column is a contract error.
    """
    schema = dataset.schema
    if schema.treatment is None or schema.outcome is None:
        raise ContractError("dataset needs designated treatment and outcome columns")
    if immutable is not None:
        bad = {schema.treatment, schema.outcome} & set(immutable)
        if bad:
            raise ContractError(f"treatment/outcome cannot be immutable attributes: {sorted(bad)}")
        schema = with_roles(schema, [n for n in schema.names
                                     if n in immutable or schema.features[schema.index(n)].immutable])
        dataset = type(dataset)(schema, dataset.features, dataset.targets, None, dataset.truth)
    if len(dataset) == 0:
        raise DataError("train_causal: empty dataset")
    X, t, y = dataset.X, _check_binary(dataset.t, "t"), _check_binary(dataset.y, "y")
    rng = np.random.default_rng(seed)
    model = CausalDecisionModel.build(schema, dataset.encoder, latent_dim, rng, hidden)
    params = model.parameters()
    state = AdamState.for_params(params, lr=lr)
    n = len(X)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total, min_kl = 0.0, np.inf
        for start in range(0, n, batch_size):
            rows = order[start:start + batch_size]
            noise = rng.standard_normal((len(rows), latent_dim))
            with Tape() as tape:
                loss, parts = causal_elbo_terms(model, X[rows], t[rows], y[rows], noise)
            if parts["kl"].min() < -1e-9:
                raise NumericError(f"negative KL in epoch {epoch}")
            min_kl = min(min_kl, float(parts["kl"].min()))
            total += float(loss.data) * len(rows)
            backward(tape, loss)
            adam_step(params, [p.grad for p in params], state)
            for p in params:
                p.grad = None
        if history is not None:
            history.setdefault("loss", []).append(total / n)
            history.setdefault("min_kl", []).append(min_kl)
        log.debug("causal epoch %d loss %.5f", epoch, total / n)
    return model


def estimate_ate(model, dataset):
    """Mean over rows of p(y|do(1)) - p(y|do(0)) at z = posterior mean of the factual triple."""
    if len(dataset) == 0:
        raise DataError("estimate_ate: empty dataset")
    mu, _ = infer_z(model, dataset.X, dataset.t, dataset.y)
    p1 = predict_outcome_do(model, mu, dataset.X, 1)
    p0 = predict_outcome_do(model, mu, dataset.X, 0)
    return float(np.mean(p1 - p0))


def full_batch_loss(model, dataset, seed=0):
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((len(dataset), model.latent_dim))
    return float(causal_elbo(model, dataset.X, dataset.t, dataset.y, noise).data)

