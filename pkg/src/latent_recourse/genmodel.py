"""Heterogeneous-likelihood VAE used as the data-manifold model.

The decoder emits one likelihood head per reconstructed attribute:
a Gaussian (mean, log-variance) in standardized space for reals, the
same in standardized log1p space for positive reals, and logits for
categoricals. A conditional model appends the encoded immutable columns
to the decoder input and drops their heads.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .errors import ContractError, DataError, NumericError, ShapeError
from .nn import DenseNetwork
from .optim import AdamState, adam_step
from .schema import CATEGORICAL

log = logging.getLogger(__name__)

LOG2PI = float(np.log(2.0 * np.pi))
LOGVAR_BOUND = 8.0


def soft_clamp(t, bound=LOGVAR_BOUND):
    """bound * tanh(t / bound): identity near 0, smoothly limited to (-bound, bound)."""
    return ad.scale(ad.tanh(ad.scale(t, 1.0 / bound)), bound)


class HeadLayout:
    """Where each reconstructed attribute lives in the decoder output and in the encoded row."""

    def __init__(self, schema, recon_idx):
        self.schema = schema
        self.recon_idx = tuple(recon_idx)
        mean_cols, logvar_cols, numeric_enc = [], [], []
        logit_cols, cat_enc, bounds = [], [], [0]
        pos = 0
        for i in self.recon_idx:
            a = schema.features[i]
            start = schema.offsets[i]
            if a.kind == CATEGORICAL:
                logit_cols.extend(range(pos, pos + a.cardinality))
                cat_enc.extend(range(start, start + a.cardinality))
                bounds.append(bounds[-1] + a.cardinality)
                pos += a.cardinality
            else:
                mean_cols.append(pos)
                logvar_cols.append(pos + 1)
                numeric_enc.append(start)
                pos += 2
        self.width = pos
        self.mean_cols = np.asarray(mean_cols, dtype=np.intp)
        self.logvar_cols = np.asarray(logvar_cols, dtype=np.intp)
        self.numeric_enc = np.asarray(numeric_enc, dtype=np.intp)
        self.logit_cols = np.asarray(logit_cols, dtype=np.intp)
        self.cat_enc = np.asarray(cat_enc, dtype=np.intp)
        self.cat_bounds = np.asarray(bounds, dtype=np.int64)
        fixed = [c for c in range(schema.encoded_width)
                 if c not in set(numeric_enc) | set(cat_enc)]
        self.fixed_enc = np.asarray(fixed, dtype=np.intp)
        # concat([means, probs, fixed]) -> encoded order
        order = np.concatenate([self.numeric_enc, self.cat_enc, self.fixed_enc])
        self.assemble = np.argsort(order, kind="stable")

    @property
    def n_numeric(self):
        return len(self.mean_cols)

    @property
    def n_categorical_cols(self):
        return len(self.logit_cols)


@dataclass
class Decoded:
    """Decoder output for a batch.

    ``soft`` is the differentiable encoded reconstruction (means and
    class probabilities); ``encoded`` hardens categoricals to one-hot;
    ``features`` is the raw-space point estimate.
    """

    head_params: np.ndarray
    soft: np.ndarray
    encoded: np.ndarray
    features: np.ndarray


class AttributeDecoder:
    """Decoder network plus head layout; shared by the VAE and the causal model."""

    def _init_decoder(self, schema, encoder, latent_dim, dec_net, conditional):
        self.schema = schema
        self.encoder = encoder  # data.Encoder with the training statistics
        self.latent_dim = latent_dim
        self.dec_net = dec_net
        self.conditional = conditional
        recon = schema.mutable_idx if conditional else tuple(range(schema.n_features))
        self.layout = HeadLayout(schema, recon)
        self.cond_cols = schema.encoded_columns(schema.immutable_idx) if conditional \
            else np.zeros(0, dtype=np.intp)
        if dec_net.input_dim != latent_dim + len(self.cond_cols):
            raise ShapeError("decoder input must be latent_dim + conditioning width")
        if dec_net.output_dim != self.layout.width:
            raise ShapeError(f"decoder output {dec_net.output_dim} != head width {self.layout.width}")

    @staticmethod
    def _build_decoder(schema, latent_dim, rng, hidden, conditional):
        layout = HeadLayout(schema, schema.mutable_idx if conditional else range(schema.n_features))
        n_cond = len(schema.encoded_columns(schema.immutable_idx)) if conditional else 0
        return DenseNetwork.build([latent_dim + n_cond, *hidden, layout.width],
                                  ["tanh"] * len(hidden) + ["identity"], rng)

    # ------------------------------------------------------------ decoder

    def _decoder_input(self, z, x_cond):
        z = ad.as_tensor(z)
        if z.data.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ShapeError(f"decode: z must have shape (n, {self.latent_dim})")
        if not self.conditional:
            return z
        if x_cond is None:
            raise ContractError("conditional model needs the immutable attributes x_I")
        x_cond = np.atleast_2d(np.asarray(x_cond, dtype=np.float64))
        if x_cond.shape[1] == self.schema.encoded_width:
            x_cond = x_cond[:, self.cond_cols]
        if x_cond.shape[1] != len(self.cond_cols):
            raise ShapeError("conditioning block has the wrong width")
        if len(x_cond) == 1 and z.shape[0] > 1:
            x_cond = np.repeat(x_cond, z.shape[0], axis=0)
        return ad.concat([z, Tensor(x_cond)], axis=1)

    def head_params_t(self, z, x_cond=None):
        return self.dec_net.forward(self._decoder_input(z, x_cond))

    def soft_reconstruction_t(self, params, x_ref):
        """Encoded-width tensor: numeric means, class probabilities, fixed columns from ``x_ref``."""
        lay = self.layout
        parts = []
        if lay.n_numeric:
            parts.append(ad.take_cols(params, lay.mean_cols))
        if lay.n_categorical_cols:
            logits = ad.take_cols(params, lay.logit_cols)
            parts.append(ad.exp(ad.segment_log_softmax(logits, lay.cat_bounds)))
        if len(lay.fixed_enc):
            x_ref = np.atleast_2d(np.asarray(x_ref, dtype=np.float64))[:, lay.fixed_enc]
            if len(x_ref) == 1 and params.shape[0] > 1:
                x_ref = np.repeat(x_ref, params.shape[0], axis=0)
            parts.append(Tensor(x_ref))
        return ad.take_cols(ad.concat(parts, axis=1), lay.assemble)

    def decode_soft(self, z, x_ref=None):
        """Differentiable map z -> encoded row (used by the recourse objective)."""
        return self.soft_reconstruction_t(self.head_params_t(z, x_ref), x_ref)

    def decode(self, z, x_ref_encoded=None, x_ref_features=None):
        """Point estimates. ``x_ref_*`` supply immutable values for conditional models."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        params = self.head_params_t(z, x_ref_encoded)
        soft = self.soft_reconstruction_t(params, x_ref_encoded).data
        return self.point_estimate(soft, x_ref_features, params.data)

    def point_estimate(self, soft, x_ref_features=None, head_params=None):
        soft = np.atleast_2d(soft)
        encoded = self.encoder.harden(soft)
        features = self.encoder.decode(encoded)
        if self.conditional:
            if x_ref_features is None:
                raise ContractError("conditional decode needs raw immutable values")
            ref = np.atleast_2d(np.asarray(x_ref_features, dtype=np.float64))
            imm = list(self.schema.immutable_idx)
            features[:, imm] = ref[:, imm] if len(ref) == len(features) else ref[0, imm]
        return Decoded(head_params, soft, encoded, features)


class HeterogeneousVAE(AttributeDecoder):
    def __init__(self, schema, encoder, latent_dim, enc_net, dec_net, conditional=False):
        self._init_decoder(schema, encoder, latent_dim, dec_net, conditional)
        self.enc_net = enc_net
        if enc_net.output_dim != 2 * latent_dim:
            raise ShapeError("encoder must output 2 * latent_dim values")

    @classmethod
    def build(cls, schema, encoder, latent_dim, rng, hidden=(32, 32), conditional=False):
        d = schema.encoded_width
        enc = DenseNetwork.build([d, *hidden, 2 * latent_dim], ["tanh"] * len(hidden) + ["identity"], rng)
        dec = cls._build_decoder(schema, latent_dim, rng, hidden, conditional)
        return cls(schema, encoder, latent_dim, enc, dec, conditional)

    def parameters(self):
        return self.enc_net.parameters() + self.dec_net.parameters()

    # ------------------------------------------------------------ encoder

    def encode_t(self, x):
        x = ad.as_tensor(x)
        if x.shape[1] != self.schema.encoded_width:
            raise ShapeError(f"encode: expected width {self.schema.encoded_width}, got {x.shape[1]}")
        out = self.enc_net.forward(x)
        k = self.latent_dim
        return ad.take_cols(out, slice(0, k)), soft_clamp(ad.take_cols(out, slice(k, 2 * k)))

    def encode(self, x_encoded):
        """Posterior mean and log-variance for encoded rows."""
        x = np.atleast_2d(np.asarray(x_encoded, dtype=np.float64))
        mu, lv = self.encode_t(x)
        return mu.data, lv.data

    def encode_mean(self, x_encoded):
        return self.encode(x_encoded)[0]

    def reconstruct(self, x_encoded, x_features=None):
        mu, _ = self.encode(x_encoded)
        return self.decode(mu, x_encoded, x_features)


# ---------------------------------------------------------------- objective

def reparam_sample(mu, logvar, eps):
    """z = mu + exp(logvar / 2) * eps."""
    return ad.add(mu, ad.mul(ad.exp(ad.scale(logvar, 0.5)), eps))


def kl_standard_normal(mu, logvar):
    """Per-row KL(N(mu, exp(logvar)) || N(0, I)) in closed form."""
    terms = ad.sub(ad.add(ad.square(mu), ad.exp(logvar)), ad.add(logvar, 1.0))
    return ad.scale(ad.sum_(terms, axis=1), 0.5)


def gaussian_nll(x, mean, logvar):
    """Elementwise -log N(x; mean, exp(logvar))."""
    diff = ad.sub(mean, x)
    quad = ad.mul(ad.square(diff), ad.exp(ad.neg(logvar)))
    return ad.scale(ad.add(ad.add(logvar, quad), LOG2PI), 0.5)


def reconstruction_nll(layout, params, x_encoded):
    """Per-row negative log-likelihood summed over reconstructed heads."""
    x_encoded = np.asarray(x_encoded, dtype=np.float64)
    parts = []
    if layout.n_numeric:
        mean = ad.take_cols(params, layout.mean_cols)
        lv = soft_clamp(ad.take_cols(params, layout.logvar_cols))
        parts.append(ad.sum_(gaussian_nll(x_encoded[:, layout.numeric_enc], mean, lv), axis=1))
    if layout.n_categorical_cols:
        logp = ad.segment_log_softmax(ad.take_cols(params, layout.logit_cols), layout.cat_bounds)
        parts.append(ad.neg(ad.sum_(ad.mul(logp, x_encoded[:, layout.cat_enc]), axis=1)))
    return ad.add_n(parts) if len(parts) > 1 else parts[0]


@dataclass
class ElboTerms:
    loss: Tensor
    nll: Tensor  # per row
    kl: Tensor  # per row


def elbo_terms(vae, x_encoded, noise):
    x_encoded = np.atleast_2d(np.asarray(x_encoded, dtype=np.float64))
    mu, lv = vae.encode_t(x_encoded)
    z = reparam_sample(mu, lv, noise)
    params = vae.head_params_t(z, x_encoded)
    nll = reconstruction_nll(vae.layout, params, x_encoded)
    kl = kl_standard_normal(mu, lv)
    loss = ad.mean(ad.add(nll, kl))
    if not np.isfinite(loss.data):
        raise NumericError("non-finite ELBO loss")
    return ElboTerms(loss, nll, kl)


def elbo_loss(vae, x_encoded, noise):
    """Mean over rows of reconstruction NLL + KL(q(z|x) || N(0, I))."""
    return elbo_terms(vae, x_encoded, noise).loss


# ---------------------------------------------------------------- training

def train_vae(dataset, latent_dim=2, epochs=50, seed=0, conditional=False, hidden=(32, 32),
              batch_size=128, lr=3e-3, history=None):
    """Adam on the negative ELBO over shuffled mini-batches.

    ``history`` (a dict) receives ``loss`` (mean per epoch) and
    ``min_kl`` (smallest per-row KL seen in each epoch).
    """
    X = dataset.X
    if len(X) == 0:
        raise DataError("train_vae: empty dataset")
    if latent_dim < 1:
        raise ContractError("latent_dim must be >= 1")
    if latent_dim >= X.shape[1]:
        warnings.warn(f"latent_dim {latent_dim} >= encoded width {X.shape[1]}", stacklevel=2)
    if conditional and not dataset.schema.immutable_idx:
        raise ContractError("conditional training needs at least one immutable attribute")
    rng = np.random.default_rng(seed)
    vae = HeterogeneousVAE.build(dataset.schema, dataset.encoder, latent_dim, rng, hidden, conditional)
    params = vae.parameters()
    state = AdamState.for_params(params, lr=lr)
    n = len(X)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total, min_kl = 0.0, np.inf
        for start in range(0, n, batch_size):
            rows = order[start:start + batch_size]
            noise = rng.standard_normal((len(rows), latent_dim))
            with Tape() as tape:
                terms = elbo_terms(vae, X[rows], noise)
            batch_min = float(terms.kl.data.min())
            if batch_min < -1e-9:
                raise NumericError(f"negative KL {batch_min} in epoch {epoch}")
            min_kl = min(min_kl, batch_min)
            total += float(terms.loss.data) * len(rows)
            backward(tape, terms.loss)
            adam_step(params, [p.grad for p in params], state)
            for p in params:
                p.grad = None
        if history is not None:
            history.setdefault("loss", []).append(total / n)
            history.setdefault("min_kl", []).append(min_kl)
        log.debug("vae epoch %d loss %.5f", epoch, total / n)
    return vae


def categorical_accuracy(vae, dataset):
    """Fraction of reconstructed categorical attributes equal to the input (encode -> mean -> decode)."""
    dec = vae.reconstruct(dataset.X, dataset.features)
    idx = [i for i in vae.layout.recon_idx if dataset.schema.features[i].kind == CATEGORICAL]
    if not idx:
        return float("nan")
    return float(np.mean(dec.features[:, idx] == dataset.features[:, idx]))
