"""Synthetic generators with stored ground truth.

Every generator is a pure function of its arguments: the same
parameters and seed give byte-identical CSV output.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .data import Dataset, _fmt
from .errors import ContractError
from .schema import Attribute, AttributeSchema, CATEGORICAL, POSITIVE, REAL


@dataclass
class SyntheticGroundTruth:
    """Oracle quantities kept next to (never inside) the training data."""

    z_true: np.ndarray
    y0: np.ndarray = None
    y1: np.ndarray = None
    a: np.ndarray = None
    params: dict = field(default_factory=dict)

    def subset(self, rows):
        pick = lambda v: None if v is None else v[rows]  # noqa: E731
        return SyntheticGroundTruth(self.z_true[rows], pick(self.y0), pick(self.y1), pick(self.a),
                                    self.params)

    @property
    def ate(self):
        return float(np.mean(self.y1 - self.y0))

    def write_csv(self, path):
        k = self.z_true.shape[1]
        cols = [f"z_true_{i}" for i in range(k)]
        extra = [(name, v) for name, v in (("y0", self.y0), ("y1", self.y1), ("a", self.a))
                 if v is not None]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols + [name for name, _ in extra])
            for r in range(len(self.z_true)):
                w.writerow([_fmt(v) for v in self.z_true[r]] + [_fmt(v[r]) for _, v in extra])

    @classmethod
    def read_csv(cls, path):
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.asarray(rows[1:], dtype=np.float64)
        zc = [i for i, h in enumerate(header) if h.startswith("z_true_")]
        get = lambda n: body[:, header.index(n)].astype(np.int64) if n in header else None  # noqa: E731
        return cls(body[:, zc], get("y0"), get("y1"), get("a"))


def _bucket(score, scale, card):
    cuts = norm.ppf(np.arange(1, card) / card) * scale
    return np.searchsorted(cuts, score)


def synth_classification(n, seed=0, n_real=4, n_positive=1, n_categorical=2, cardinality=3,
                         latent_dim=2, margin=3.0, noise=0.1, cat_noise=0.02, immutable_group=True):
    """Two latent Gaussian blobs at ``+/- margin`` along one axis, observed through mixed features.

    Features are a noisy linear image of the latent code (reals), an
    exponentiated projection (positive reals), and quantized projections
    with flip noise (categoricals). An optional binary ``group`` column is
    immutable and shifts the real features. Labels are in {-1, 1}.
    """
    if n < 10:
        raise ContractError("synth_classification needs n >= 10")
    if n_real + n_positive < 1:
        raise ContractError("need at least one numeric feature")
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(latent_dim, n_real)) / np.sqrt(latent_dim)
    B = rng.normal(size=(latent_dim, n_positive)) / np.sqrt(latent_dim)
    W = rng.normal(size=(latent_dim, n_categorical))
    shift = rng.normal(scale=0.5, size=n_real)

    label = np.where(rng.random(n) < 0.5, -1, 1)
    z = rng.normal(size=(n, latent_dim))
    z[:, 0] += margin * label
    group = (rng.random(n) < 0.5).astype(np.float64)

    cols, attrs = [], []
    x_real = z @ A + noise * rng.normal(size=(n, n_real))
    if immutable_group:
        x_real += group[:, None] * shift
    for j in range(n_real):
        cols.append(x_real[:, j])
        attrs.append(Attribute(f"x{j}", REAL))
    x_pos = np.exp(0.5 * (z @ B) + noise * rng.normal(size=(n, n_positive)))
    for j in range(n_positive):
        cols.append(x_pos[:, j])
        attrs.append(Attribute(f"p{j}", POSITIVE))
    for j in range(n_categorical):
        w = W[:, j]
        scale = np.sqrt(w @ w + (margin * w[0]) ** 2)
        c = _bucket(z @ w, scale, cardinality)
        flip = rng.random(n) < cat_noise
        c[flip] = rng.integers(0, cardinality, size=flip.sum())
        cols.append(c.astype(np.float64))
        attrs.append(Attribute(f"c{j}", CATEGORICAL, cardinality))
    if immutable_group:
        cols.append(group)
        attrs.append(Attribute("group", CATEGORICAL, 2, "immutable"))
    attrs.append(Attribute("label", "binary", 0, "label"))

    schema = AttributeSchema(attrs)
    truth = SyntheticGroundTruth(z, params={"margin": margin})
    return Dataset(schema, np.column_stack(cols), {"label": label}, truth=truth)


def uplift_for_effect(tau, outcome_scale, intercept=0.0, n_nodes=80):
    """Logit-scale uplift u with E[sigmoid(s + b + u) - sigmoid(s + b)] = tau, s ~ N(0, scale^2)."""
    if not -1.0 < tau < 1.0:
        raise ContractError("tau must lie in (-1, 1)")
    nodes, weights = np.polynomial.hermite_e.hermegauss(n_nodes)
    weights = weights / weights.sum()
    base = 1.0 / (1.0 + np.exp(-(outcome_scale * nodes + intercept)))

    def gap(u):
        return float(weights @ (1.0 / (1.0 + np.exp(-(outcome_scale * nodes + intercept + u))) - base)) - tau

    if tau == 0.0:
        return 0.0
    lo, hi = (-60.0, 0.0) if tau < 0 else (0.0, 60.0)
    if gap(lo) * gap(hi) > 0:
        raise ContractError(f"effect {tau} unreachable with outcome scale {outcome_scale}")
    return brentq(gap, lo, hi, xtol=1e-12)


def synth_causal(n, k=2, tau=0.2, confounded=False, seed=0, n_real=4, n_positive=1, n_binary=3,
                 proxy_noise=1.0, outcome_scale=1.5, confounding_strength=2.5):
    """Hidden-confounder data with both potential outcomes stored.

    ``z ~ N(0, I_k)`` drives proxies ``x``, the outcome and (when
    confounded) the treatment. ``y(0)`` and ``y(1)`` share one uniform
    draw, so ``y(1) - y(0)`` has the sign of the uplift. Immutable
    columns ``sex`` and ``birth_month`` are drawn independently of ``z``;
    ``sex`` shifts the first real proxy.
    """
    if n < 1:
        raise ContractError("synth_causal needs n >= 1")
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(k, n_real)) / np.sqrt(k)
    B = rng.normal(size=(k, n_positive)) / np.sqrt(k)
    C = rng.normal(size=(k, n_binary)) * 1.5 / np.sqrt(k)
    v = rng.normal(size=k)
    v *= outcome_scale / np.linalg.norm(v)
    w = v / np.linalg.norm(v) * confounding_strength
    uplift = uplift_for_effect(tau, outcome_scale)

    z = rng.normal(size=(n, k))
    sex = (rng.random(n) < 0.5).astype(np.float64)
    month = rng.integers(0, 12, size=n).astype(np.float64)

    cols, attrs = [], []
    x_real = z @ A + proxy_noise * rng.normal(size=(n, n_real))
    x_real[:, 0] += 0.5 * sex
    for j in range(n_real):
        cols.append(x_real[:, j])
        attrs.append(Attribute(f"x{j}", REAL))
    x_pos = np.exp(0.5 * (z @ B) + proxy_noise * rng.normal(size=(n, n_positive)))
    for j in range(n_positive):
        cols.append(x_pos[:, j])
        attrs.append(Attribute(f"p{j}", POSITIVE))
    logits = z @ C + rng.logistic(size=(n, n_binary)) * proxy_noise
    for j in range(n_binary):
        cols.append((logits[:, j] > 0).astype(np.float64))
        attrs.append(Attribute(f"risk{j}", CATEGORICAL, 2))
    cols.extend([sex, month])
    attrs.append(Attribute("sex", CATEGORICAL, 2, "immutable"))
    attrs.append(Attribute("birth_month", CATEGORICAL, 12, "immutable"))

    propensity = 1.0 / (1.0 + np.exp(-(z @ w))) if confounded else np.full(n, 0.5)
    t = (rng.random(n) < propensity).astype(np.int64)
    s = z @ v
    u = rng.random(n)
    p0 = 1.0 / (1.0 + np.exp(-s))
    p1 = 1.0 / (1.0 + np.exp(-(s + uplift)))
    y0 = (u < p0).astype(np.int64)
    y1 = (u < p1).astype(np.int64)
    y = np.where(t == 1, y1, y0)

    attrs.append(Attribute("t", "binary", 0, "treatment"))
    attrs.append(Attribute("y", "binary", 0, "outcome"))
    schema = AttributeSchema(attrs)
    truth = SyntheticGroundTruth(z, y0, y1, params={"uplift": uplift, "outcome_weights": v,
                                                    "propensity_weights": w, "tau": tau,
                                                    "confounded": confounded})
    return Dataset(schema, np.column_stack(cols), {"t": t, "y": y}, truth=truth)


def synth_aux_confounded(n, bias=0.0, seed=0, margin=2.0, noise=0.3, n_label_features=3,
                         n_aux_features=3):
    """Label ``L`` and auxiliary ``a`` (both in {-1, 1}) with corr(a, L) = bias in expectation.

    With probability ``bias`` a copies L, otherwise it is an independent
    fair coin. Separate feature groups carry noisy copies of each factor,
    so a classifier trained where a == L can lean on either group.
    The schema exposes both as label columns: ``label`` and ``a``.
    """
    if n < 100:
        raise ContractError("synth_aux_confounded needs n >= 100")
    if not 0.0 <= bias <= 1.0:
        raise ContractError("bias must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    label = np.where(rng.random(n) < 0.5, -1, 1)
    coin = np.where(rng.random(n) < 0.5, -1, 1)
    a = np.where(rng.random(n) < bias, label, coin)
    u_l = margin * label + rng.normal(size=n)
    u_a = margin * a + rng.normal(size=n)
    mix_l = 0.6 + 0.4 * rng.random(n_label_features)
    mix_a = 0.6 + 0.4 * rng.random(n_aux_features)

    cols, attrs = [], []
    for j in range(n_label_features):
        cols.append(mix_l[j] * u_l + noise * rng.normal(size=n))
        attrs.append(Attribute(f"l{j}", REAL))
    for j in range(n_aux_features):
        cols.append(mix_a[j] * u_a + noise * rng.normal(size=n))
        attrs.append(Attribute(f"s{j}", REAL))
    attrs.append(Attribute("label", "binary", 0, "label"))
    attrs.append(Attribute("a", "binary", 0, "label"))
    schema = AttributeSchema(attrs)
    truth = SyntheticGroundTruth(np.column_stack([u_l, u_a]), a=a, params={"bias": bias})
    return Dataset(schema, np.column_stack(cols), {"label": label, "a": a}, truth=truth)
