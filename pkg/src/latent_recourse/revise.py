"""Latent-space recourse search.

Given an individual x*, start from the generator's posterior mean z0 and
take fixed-size gradient steps on

    CE(f(G(z)), target) + lam * c(x*, G(z))

(or, for the causal model, BCE(p(y=1 | do(t), z, x_I), 1) + lam * c). The
loop spends the whole iteration budget by default so that the returned
point is the minimizer of the objective rather than the first point past
the decision boundary; the first crossing iteration is recorded
separately. Rows are optimized in fixed-size chunks, so results do not
depend on the number of worker threads.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .causal import infer_z
from .data import Encoder
from .errors import ContractError, DataError, NumericError, ShapeError
from .genmodel import Decoded
from .nn import DenseNetwork, Layer, bce_with_logits, labels_to_index
from .schema import CATEGORICAL, REAL, Attribute, AttributeSchema

log = logging.getLogger(__name__)

COST_KINDS = ("l1-mad", "l1", "l2-squared")
DEFAULT_GRID = (10.0, 1.0, 0.1, 1e-2, 1e-3, 1e-5)
DELTA_EPS = 1e-6
CHUNK = 256


@dataclass(frozen=True)
class ReviseConfig:
    lambdas: tuple = DEFAULT_GRID
    eta: float = 0.05
    tau_max: int = 500
    cost: str = "l1-mad"
    target: int = 1
    seed: int = 0
    stop_at_crossing: bool = False  # the early-exit reading of the loop condition
    step_tol: float = 1e-9          # converged once the label is right and no coordinate moves more
    record_trajectory: bool = False

    def __post_init__(self):
        lams = tuple(float(v) for v in self.lambdas)
        object.__setattr__(self, "lambdas", lams)
        if not lams:
            raise ContractError("lambda grid is empty")
        if any(not np.isfinite(v) or v <= 0 for v in lams):
            raise ContractError("lambda grid must be strictly positive")
        if not self.eta > 0:
            raise ContractError("step size eta must be > 0")
        if int(self.tau_max) < 1:
            raise ContractError("tau_max must be >= 1")
        if self.cost not in COST_KINDS:
            raise ContractError(f"unknown cost kind {self.cost!r}; expected one of {COST_KINDS}")
        if self.target not in (-1, 1):
            raise ContractError("target label must be -1 or 1")


@dataclass
class TrajectoryPoint:
    iteration: int
    label: int
    prob: float          # probability of the target (classifier) or of y=1 under do(t) (causal)
    features: np.ndarray


@dataclass
class RecourseResult:
    """Outcome of one recourse search.

    ``changes`` holds (feature index, x*_i - x'_i) for every feature
    that differs; ``crossing`` is the first iteration whose decoded
    point carried the target label (-1 if never).
    """

    success: bool
    x_star: np.ndarray
    x_prime: np.ndarray
    z0: np.ndarray
    z_final: np.ndarray
    iterations: int
    crossing: int
    changes: tuple
    lam: float
    cost: float
    raw_l1: float
    prob: float
    target: int
    start_point: np.ndarray = None     # hardened encoded G(z0)
    crossing_point: np.ndarray = None  # hardened encoded G(z_crossing)
    trajectory: list = None
    row: int = None
    trivial: bool = False              # x* already carried the target label

    @property
    def delta_z(self):
        return float(np.linalg.norm(self.z_final - self.z0))

    @property
    def n_changes(self):
        return len(self.changes)


# ---------------------------------------------------------------- cost

class CostModel:
    """Column bookkeeping for the distance term; built once per encoder."""

    def __init__(self, encoder):
        sch = encoder.schema
        self.encoder = encoder
        num, cat = [], []
        for j, a in enumerate(sch.features):
            (cat if a.kind == CATEGORICAL else num).extend(range(*sch.columns(j).indices(sch.encoded_width)))
        self.num_cols = np.asarray(num, dtype=np.intp)
        self.cat_cols = np.asarray(cat, dtype=np.intp)
        self.n_cat = sum(a.kind == CATEGORICAL for a in sch.features)
        self.inv_mad = 1.0 / np.maximum(encoder.numeric_mad()[self.num_cols], 1e-6)

    def tensor(self, x_star, x, kind):
        """Per-row cost, shape (n,), differentiable in ``x``."""
        x_star = np.atleast_2d(x_star)
        if kind == "l1-mad":
            parts = []
            if len(self.num_cols):
                d = ad.sub(ad.take_cols(x, self.num_cols), x_star[:, self.num_cols])
                parts.append(ad.sum_(ad.mul(ad.abs_(d), self.inv_mad), axis=1))
            if self.n_cat:
                kept = ad.sum_(ad.mul(ad.take_cols(x, self.cat_cols), x_star[:, self.cat_cols]), axis=1)
                parts.append(ad.sub(float(self.n_cat), kept))
            return ad.add_n(parts)
        d = ad.sub(x, x_star)
        if kind == "l1":
            return ad.sum_(ad.abs_(d), axis=1)
        if kind == "l2-squared":
            return ad.sum_(ad.square(d), axis=1)
        raise ContractError(f"unknown cost kind {kind!r}")

    def __call__(self, x_star, x, kind):
        single = np.ndim(x) == 1
        out = self.tensor(np.atleast_2d(x_star), Tensor(np.atleast_2d(x)), kind).data
        return float(out[0]) if single else out


def cost(x_star, x, encoder, kind="l1-mad"):
    """Distance between encoded rows. With hard one-hot rows the categorical part is a 0/1 mismatch."""
    if kind not in COST_KINDS:
        raise ContractError(f"unknown cost kind {kind!r}")
    return CostModel(encoder)(x_star, x, kind)


def raw_l1(x_star_features, x_features, schema):
    """Sum of |x*_j - x'_j| over raw numeric values plus the number of changed categoricals."""
    total = 0.0
    for j, a in enumerate(schema.features):
        d = abs(float(x_star_features[j]) - float(x_features[j]))
        total += float(d > 0) if a.kind == CATEGORICAL else d
    return total


def objective(z, x_star, classifier, generator, lam, kind="l1-mad", target=1, costs=None):
    """Scalar objective summed over rows; ``z`` may be a Tensor (keeps the graph) or an array."""
    z = ad.as_tensor(np.atleast_2d(z) if not isinstance(z, Tensor) else z)
    x_star = np.atleast_2d(np.asarray(x_star, dtype=np.float64))
    costs = costs or CostModel(generator.encoder)
    x_hat = _pin_immutables(generator, generator.decode_soft(z, x_star), x_star)
    per_row, _ = _classifier_terms(classifier, x_hat, x_star, lam, kind, _target_idx(target, len(x_star)),
                                   costs)
    return ad.sum_(per_row)


# ---------------------------------------------------------------- helpers

def _target_idx(target, n):
    t = np.broadcast_to(np.asarray(target), (n,))
    return labels_to_index(t)


def _pin_immutables(generator, x_hat, x_star):
    cols = generator.schema.encoded_columns(generator.schema.immutable_idx)
    if not len(cols):
        return x_hat
    keep = np.ones(x_hat.shape[1])
    keep[cols] = 0.0
    fixed = np.zeros_like(x_star)
    fixed[:, cols] = x_star[:, cols]
    return ad.add(ad.mul(x_hat, keep), fixed)


def _classifier_terms(clf, x_hat, x_star, lam, kind, tidx, costs):
    logp = ad.log_softmax(clf.logits(x_hat))
    onehot = np.zeros(logp.shape)
    onehot[np.arange(len(tidx)), tidx] = 1.0
    ce = ad.neg(ad.sum_(ad.mul(logp, onehot), axis=1))
    if lam == 0:
        return ce, logp.data
    return ad.add(ce, ad.scale(costs.tensor(x_star, x_hat, kind), lam)), logp.data


def _check_models(schema, classifier, generator):
    if generator.schema.signature() != schema.signature():
        raise DataError("schema mismatch between generator and data")
    if classifier is not None:
        if classifier.input_dim != schema.encoded_width:
            raise DataError(f"schema mismatch: classifier expects {classifier.input_dim} encoded "
                            f"columns, data has {schema.encoded_width}")
        if classifier.output_dim != 2:
            raise ShapeError("classifier must have a two-class output")


def _classify(clf, encoded):
    """Labels in {-1, 1} (ties to -1) and P(label = 1)."""
    logits = clf.logits(encoded).data
    p1 = 1.0 / (1.0 + np.exp(logits[:, 0] - logits[:, 1]))
    return np.where(logits[:, 1] > logits[:, 0], 1, -1), p1


def _descend(z0, evaluate, eta, tau_max, stop_at_crossing, step_tol, record):
    """Shared gradient loop.

    ``evaluate(z_tensor)`` returns (per-row loss tensor, hit mask,
    target prob, soft encoded x_hat). Returns final z, per-row
    iteration counts, crossing iterations, soft points at the first
    crossing, the start point and the last evaluation.
    """
    z = np.array(z0, dtype=np.float64, copy=True)
    n = len(z)
    iters = np.zeros(n, dtype=np.int64)
    crossing = np.full(n, -1, dtype=np.int64)
    stopped = np.zeros(n, dtype=bool)
    cross_soft = start_soft = None
    history = [] if record else None
    it = 0
    while True:
        zt = Tensor(z, requires_grad=True)
        with Tape() as tape:
            loss, hit, prob, soft = evaluate(zt)
            total = ad.sum_(loss)
        if not np.all(np.isfinite(loss.data)):
            raise NumericError(f"non-finite recourse objective at iteration {it}")
        if start_soft is None:
            start_soft = soft.copy()
            cross_soft = np.full_like(soft, np.nan)
        fresh = hit & (crossing < 0)
        crossing[fresh] = iters[fresh]
        cross_soft[fresh] = soft[fresh]
        if record:
            history.append((iters.copy(), hit.copy(), prob.copy(), soft.copy(), ~stopped))
        stopped |= iters >= tau_max
        if stop_at_crossing:
            stopped |= hit
        if stopped.all():
            tape.reset()
            break
        backward(tape, total, wrt=[zt])
        step = eta * zt.grad
        if not np.all(np.isfinite(step)):
            raise NumericError(f"non-finite latent gradient at iteration {it}")
        stopped |= hit & (np.max(np.abs(step), axis=1) < step_tol)
        move = ~stopped
        z[move] -= step[move]
        iters[move] += 1
        it += 1
        if not move.any():
            break
    # the last evaluation may predate the final (no-op) stop decision; both share z
    return z, iters, crossing, start_soft, cross_soft, (hit, prob, soft), history


def _trajectories(history, n, point):
    if history is None:
        return [None] * n
    out = [[] for _ in range(n)]
    for iters, hit, prob, soft, live in history:
        feats = point(soft)
        for r in np.flatnonzero(live):
            out[r].append(TrajectoryPoint(int(iters[r]), int(hit[r]), float(prob[r]), feats[r]))
    return out


def _assemble(generator, x_star_feat, x_star_enc, soft):
    """Point estimate with immutables copied and sub-epsilon changes snapped back to x*."""
    enc = generator.encoder
    sch = generator.schema
    feats = enc.decode(enc.harden(soft))
    imm = list(sch.immutable_idx)
    feats[:, imm] = x_star_feat[:, imm]
    re = enc.encode(feats)
    for j, a in enumerate(sch.features):
        if a.kind != CATEGORICAL:
            c = sch.offsets[j]
            tiny = np.abs(re[:, c] - x_star_enc[:, c]) < DELTA_EPS
            feats[tiny, j] = x_star_feat[tiny, j]
    return feats, enc.encode(feats)


def _changes(x_star, x_prime):
    return tuple((int(j), float(x_star[j] - x_prime[j])) for j in np.flatnonzero(x_star != x_prime))


# ---------------------------------------------------------------- classifier recourse

def _revise_chunk(x_feat, x_enc, classifier, generator, lam, config, targets, costs, rows):
    sch = generator.schema
    n = len(x_feat)
    targets = np.asarray(targets)
    tidx = _target_idx(targets, n)
    current, p_now = _classify(classifier, x_enc)
    z0 = np.atleast_2d(generator.encode_mean(x_enc))
    p_tgt = lambda p1: np.where(tidx == 1, p1, 1.0 - p1)  # noqa: E731

    def evaluate(zt):
        x_hat = _pin_immutables(generator, generator.decode_soft(zt, x_enc), x_enc)
        loss, logp = _classifier_terms(classifier, x_hat, x_enc, lam, config.cost, tidx, costs)
        prob = np.exp(logp[np.arange(n), tidx])
        hit = logp[np.arange(n), tidx] > logp[np.arange(n), 1 - tidx]
        return loss, hit, prob, x_hat.data

    done = current == targets
    z, iters, crossing, start, cross, _, hist = _descend(
        z0, evaluate, config.eta, config.tau_max, config.stop_at_crossing, config.step_tol,
        config.record_trajectory)
    soft_final = generator.decode_soft(z, x_enc)
    soft_final = _pin_immutables(generator, soft_final, x_enc).data
    feats, enc_prime = _assemble(generator, x_feat, x_enc, soft_final)
    labels, p1 = _classify(classifier, enc_prime)
    trajs = _trajectories(hist, n, lambda s: _assemble(generator, x_feat, x_enc, s)[0])

    out = []
    for r in range(n):
        tgt = int(targets[r])
        if done[r]:
            # already at the target: nothing to change
            out.append(RecourseResult(True, x_feat[r].copy(), x_feat[r].copy(), z0[r].copy(), z0[r].copy(),
                                      0, 0, (), lam, 0.0, 0.0, float(p_tgt(p_now)[r]), tgt,
                                      generator.encoder.harden(start[r]),
                                      generator.encoder.harden(start[r]), trajs[r] and trajs[r][:1],
                                      None if rows is None else int(rows[r]), trivial=True))
            continue
        ok = bool(labels[r] == tgt)
        if not ok and crossing[r] >= 0:
            log.debug("row %s: decoded x' lost the target label; reported as failure", r)
        cpt = None if crossing[r] < 0 else generator.encoder.harden(cross[r])
        out.append(RecourseResult(
            ok, x_feat[r].copy(), feats[r], z0[r].copy(), z[r].copy(), int(iters[r]), int(crossing[r]),
            _changes(x_feat[r], feats[r]), lam, float(costs(x_enc[r], enc_prime[r], config.cost)),
            raw_l1(x_feat[r], feats[r], sch), float(p_tgt(p1)[r]), tgt,
            generator.encoder.harden(start[r]), cpt, trajs[r], None if rows is None else int(rows[r])))
    return out


def _chunked(n, fn, threads):
    spans = [(s, min(s + CHUNK, n)) for s in range(0, n, CHUNK)]
    if threads and threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda sp: fn(*sp), spans))
    else:
        parts = [fn(*sp) for sp in spans]
    return [r for part in parts for r in part]


def _prepare(x_features, generator):
    x_feat = np.atleast_2d(np.asarray(x_features, dtype=np.float64))
    if x_feat.shape[1] != generator.schema.n_features:
        raise DataError(f"expected {generator.schema.n_features} feature columns, got {x_feat.shape[1]}")
    return x_feat, generator.encoder.encode(x_feat)


def revise_batch(x_features, classifier, generator, lam, config=ReviseConfig(), targets=None, rows=None,
                 threads=1):
    """Recourse for every row of ``x_features`` (raw values) at one lambda."""
    _check_models(generator.schema, classifier, generator)
    if lam < 0:
        raise ContractError("lambda must be >= 0")
    x_feat, x_enc = _prepare(x_features, generator)
    n = len(x_feat)
    targets = np.full(n, config.target) if targets is None else np.asarray(targets).reshape(n)
    costs = CostModel(generator.encoder)
    rows = np.arange(n) if rows is None else np.asarray(rows)

    def run(a, b):
        return _revise_chunk(x_feat[a:b], x_enc[a:b], classifier, generator, lam, config, targets[a:b],
                             costs, rows[a:b])
    return _chunked(n, run, threads)


def revise(x_star, classifier, generator, lam, config=ReviseConfig(), target=None):
    """Single-row convenience wrapper around :func:`revise_batch`."""
    x_star = np.asarray(x_star, dtype=np.float64)
    if x_star.ndim != 1:
        raise ShapeError("revise takes one raw feature row; use revise_batch for several")
    tgt = config.target if target is None else target
    return revise_batch(x_star[None, :], classifier, generator, lam, config, [tgt])[0]


# ---------------------------------------------------------------- causal recourse

def _causal_chunk(x_feat, x_enc, t, y, model, do_t, lam, config, costs, rows):
    sch = model.schema
    n = len(x_feat)
    z0, _ = infer_z(model, x_enc, t, y)

    def evaluate(zt):
        x_hat = _pin_immutables(model, model.decode_soft(zt, x_enc), x_enc)
        logit = model.outcome_logit_t(zt, x_enc, do_t)
        loss = ad.sum_(bce_with_logits(logit, np.ones((n, 1))), axis=1)
        if lam:
            loss = ad.add(loss, ad.scale(costs.tensor(x_enc, x_hat, config.cost), lam))
        prob = 1.0 / (1.0 + np.exp(-logit.data[:, 0]))
        return loss, prob > 0.5, prob, x_hat.data

    z, iters, crossing, start, cross, (hit, prob, _), hist = _descend(
        z0, evaluate, config.eta, config.tau_max, config.stop_at_crossing, config.step_tol,
        config.record_trajectory)
    logit = model.outcome_logit_t(z, x_enc, do_t).data[:, 0]
    prob = 1.0 / (1.0 + np.exp(-logit))
    soft_final = _pin_immutables(model, model.decode_soft(z, x_enc), x_enc).data
    feats, enc_prime = _assemble(model, x_feat, x_enc, soft_final)
    trajs = _trajectories(hist, n, lambda s: _assemble(model, x_feat, x_enc, s)[0])
    out = []
    for r in range(n):
        cpt = None if crossing[r] < 0 else model.encoder.harden(cross[r])
        out.append(RecourseResult(
            bool(prob[r] > 0.5), x_feat[r].copy(), feats[r], z0[r].copy(), z[r].copy(), int(iters[r]),
            int(crossing[r]), _changes(x_feat[r], feats[r]), lam,
            float(costs(x_enc[r], enc_prime[r], config.cost)), raw_l1(x_feat[r], feats[r], sch),
            float(prob[r]), 1, model.encoder.harden(start[r]), cpt, trajs[r], int(rows[r])))
    return out


def revise_causal_batch(x_features, t, y, model, do_t, lam, config=ReviseConfig(), rows=None, threads=1):
    """Recourse toward y = 1 under do(t = do_t) for individuals observed with (x*, t, y)."""
    if do_t not in (0, 1):
        raise ContractError("intervention must be do(t=0) or do(t=1)")
    if lam < 0:
        raise ContractError("lambda must be >= 0")
    x_feat, x_enc = _prepare(x_features, model)
    n = len(x_feat)
    t = np.broadcast_to(np.asarray(t), (n,))
    y = np.broadcast_to(np.asarray(y), (n,))
    costs = CostModel(model.encoder)
    rows = np.arange(n) if rows is None else np.asarray(rows)

    def run(a, b):
        return _causal_chunk(x_feat[a:b], x_enc[a:b], t[a:b], y[a:b], model, do_t, lam, config, costs,
                             rows[a:b])
    return _chunked(n, run, threads)


def revise_causal(x_star, t, y, model, do_t, lam, config=ReviseConfig()):
    x_star = np.asarray(x_star, dtype=np.float64)
    if x_star.ndim != 1:
        raise ShapeError("revise_causal takes one raw feature row")
    return revise_causal_batch(x_star[None, :], [t], [y], model, do_t, lam, config)[0]


# ---------------------------------------------------------------- lambda sweep

def select(results):
    """Largest-lambda success (ties: smallest cost); otherwise the failure at the smallest lambda."""
    if not results:
        raise ContractError("empty lambda grid")
    wins = [r for r in results if r.success]
    if wins:
        return min(wins, key=lambda r: (-r.lam, r.cost))
    return min(results, key=lambda r: r.lam)


@dataclass
class Sweep:
    """Per-lambda results for a batch plus the selected result per row."""

    lambdas: tuple
    per_lambda: dict = field(default_factory=dict)  # lam -> list[RecourseResult]
    best: list = field(default_factory=list)


def _sweep(run_one, lambdas):
    per = {lam: run_one(lam) for lam in lambdas}
    n = len(next(iter(per.values())))
    best = [select([per[lam][i] for lam in lambdas]) for i in range(n)]
    return Sweep(tuple(lambdas), per, best)


def lambda_sweep_batch(x_features, classifier, generator, config=ReviseConfig(), targets=None, rows=None,
                       threads=1):
    return _sweep(lambda lam: revise_batch(x_features, classifier, generator, lam, config, targets, rows,
                                           threads), config.lambdas)


def lambda_sweep_causal_batch(x_features, t, y, model, do_t, config=ReviseConfig(), rows=None, threads=1):
    return _sweep(lambda lam: revise_causal_batch(x_features, t, y, model, do_t, lam, config, rows,
                                                  threads), config.lambdas)


def lambda_sweep(x_star, classifier, generator, config=ReviseConfig()):
    """Best single-row result over ``config.lambdas``."""
    x_star = np.asarray(x_star, dtype=np.float64)
    return lambda_sweep_batch(x_star[None, :], classifier, generator, config).best[0]


def trajectory_rows(result, schema):
    """Flat rows (iteration, label, prob, *features) for export."""
    if result.trajectory is None:
        raise ContractError("result has no trajectory; rerun with record_trajectory=True")
    header = ["iteration", "label", "prob", *schema.names]
    body = [[p.iteration, p.label, p.prob, *p.features] for p in result.trajectory]
    return header, body


# ---------------------------------------------------------------- identity testbed

class IdentityGenerator:
    """G = F = identity on standardized real features (k = d). Used for oracle checks."""

    def __init__(self, schema, encoder):
        if any(a.kind != REAL for a in schema.features):
            raise ContractError("identity generator needs an all-real schema")
        self.schema = schema
        self.encoder = encoder
        self.latent_dim = schema.encoded_width
        self.conditional = False

    def encode_mean(self, x_encoded):
        return np.atleast_2d(np.asarray(x_encoded, dtype=np.float64)).copy()

    def encode(self, x_encoded):
        mu = self.encode_mean(x_encoded)
        return mu, np.zeros_like(mu)

    def decode_soft(self, z, x_ref=None):
        return ad.scale(ad.as_tensor(z), 1.0)

    def point_estimate(self, soft, x_ref_features=None, head_params=None):
        soft = np.atleast_2d(soft)
        return Decoded(head_params, soft, soft.copy(), self.encoder.decode(soft))


def identity_testbed(d=2, weight=2.0):
    """(classifier, generator) with logit difference ``weight * x_1`` and unit-scale encoding."""
    schema = AttributeSchema([Attribute(f"x{i + 1}", REAL) for i in range(d)]
                             + [Attribute("label", "binary", 0, "label")])
    enc = Encoder(schema, np.zeros(d), np.ones(d), np.ones(d), np.ones(d))
    w = np.zeros((d, 2))
    w[0] = (-weight / 2.0, weight / 2.0)
    clf = DenseNetwork([Layer(w, np.zeros(2), "softmax")])
    return clf, IdentityGenerator(schema, enc)
