"""Recourse metrics, report tables and the auxiliary-attribute flip audit."""

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataError
from .nn import predict_labels
from .revise import ReviseConfig, lambda_sweep_batch, revise_batch
from .schema import CATEGORICAL

NO_CHANGE = "-"


@dataclass
class AuditRow:
    key: str
    count: int
    successes: int
    mean_dz: float = None
    mean_cost: float = None
    mean_raw_l1: float = None
    median_changes: float = None
    max_changes: int = None

    @property
    def success_rate(self):
        return self.successes / self.count


def recourse_metrics(results, key="all"):
    """Aggregate one set of results. Distances are over successes only (None if there are none)."""
    results = list(results)
    if not results:
        raise ContractError("recourse_metrics needs at least one result")
    ok = [r for r in results if r.success]
    row = AuditRow(str(key), len(results), len(ok))
    if ok:
        row.mean_dz = float(np.mean([r.delta_z for r in ok]))
        row.mean_cost = float(np.mean([r.cost for r in ok]))
        row.mean_raw_l1 = float(np.mean([r.raw_l1 for r in ok]))
        nc = [r.n_changes for r in ok]
        row.median_changes = float(np.median(nc))
        row.max_changes = int(max(nc))
    return row


@dataclass
class FlipResult:
    fraction: float   # None when nothing succeeded
    count: int        # successful recourses the fraction is taken over
    flips: int
    audited: int


@dataclass
class AuditReport:
    rows: list
    cost_kind: str = "l1-mad"
    confounding: dict = field(default_factory=dict)

    def render(self, fmt="tsv"):
        head = ["lambda", "count", "success_rate", "mean_dz", f"mean_cost[{self.cost_kind}]",
                "mean_raw_l1", "median_changes", "max_changes"]
        body = []
        for r in self.rows:
            body.append([r.key, str(r.count), _num(r.success_rate), _num(r.mean_dz), _num(r.mean_cost),
                         _num(r.mean_raw_l1), _num(r.median_changes, 1),
                         "" if r.max_changes is None else str(r.max_changes)])
        text = render_table(head, body, fmt)
        if self.confounding:
            text += "\n" + render_flip_table(self.confounding, fmt)
        return text


def render_flip_table(flips, fmt="tsv"):
    head = ["target", "flip_fraction", "flips", "successes", "audited"]
    body = [[name, _num(f.fraction), str(f.flips), str(f.count), str(f.audited)] for name, f in flips.items()]
    return render_table(head, body, fmt)


def _num(v, digits=4):
    return "" if v is None else f"{v:.{digits}f}"


def render_table(head, body, fmt):
    if fmt == "tsv":
        return "".join("\t".join(r) + "\n" for r in [head, *body])
    if fmt == "md":
        lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        lines += ["| " + " | ".join(c if c else " " for c in r) + " |" for r in body]
        return "\n".join(lines) + "\n"
    raise ContractError(f"unknown report format {fmt!r} (md or tsv)")


def sweep_report(sweep, cost_kind="l1-mad"):
    """One row per lambda plus a ``selected`` row for the per-individual choice.

    Individuals already at the target label are left out of the summary.
    """
    keep = [i for i, r in enumerate(sweep.best) if not r.trivial]
    if not keep:
        raise DataError("no selected individual needs recourse")
    rows = [recourse_metrics([sweep.per_lambda[lam][i] for i in keep], _lam_key(lam)) for lam in sweep.lambdas]
    rows.append(recourse_metrics([sweep.best[i] for i in keep], "selected"))
    return AuditReport(rows, cost_kind)


def _lam_key(lam):
    return repr(float(lam))


# ---------------------------------------------------------------- per-individual tables

def _cell(a, v, exact):
    if a.kind == CATEGORICAL:
        return str(int(v))
    return repr(float(v)) if exact else f"{v:.4f}"


def render_recourse_table(x_star, columns, schema, fmt="md"):
    """Attribute rows changed by at least one method; '-' where a method leaves it alone.

    ``columns`` maps a method name to a RecourseResult. TSV cells keep
    full precision so a re-parse recovers every change exactly; markdown
    uses 4 decimals.
    """
    x_star = np.asarray(x_star, dtype=np.float64)
    for name, res in columns.items():
        if len(res.x_prime) != schema.n_features or not np.array_equal(res.x_star, x_star):
            raise DataError(f"column {name!r} does not belong to this individual/schema")
    exact = fmt == "tsv"
    changed = {name: dict(res.changes) for name, res in columns.items()}
    touched = sorted({j for ch in changed.values() for j in ch})
    head = ["attribute", "original", *columns]
    body = []
    for j in touched:
        a = schema.features[j]
        row = [a.name, _cell(a, x_star[j], exact)]
        for name, res in columns.items():
            row.append(_cell(a, res.x_prime[j], exact) if j in changed[name] else NO_CHANGE)
        body.append(row)
    return render_table(head, body, fmt)


def parse_recourse_table(text):
    """Inverse of :func:`render_recourse_table`: {method: {attribute: original - new}}."""
    lines = [ln for ln in io.StringIO(text).read().splitlines() if ln.strip()]
    if not lines:
        raise DataError("empty table")
    if lines[0].startswith("|"):
        split = lambda ln: [c.strip() for c in ln.strip().strip("|").split("|")]  # noqa: E731
        lines = [lines[0]] + lines[2:]
    else:
        split = lambda ln: ln.split("\t")  # noqa: E731
    head = split(lines[0])
    methods = head[2:]
    out = {m: {} for m in methods}
    for ln in lines[1:]:
        cells = split(ln)
        if len(cells) != len(head):
            raise DataError(f"table row has {len(cells)} cells, header has {len(head)}")
        orig = float(cells[1])
        for m, c in zip(methods, cells[2:]):
            if c != NO_CHANGE:
                out[m][cells[0]] = orig - float(c)
    return out


# ---------------------------------------------------------------- confounding

def confounding_audit(targets, reference, generator, x_features, config=ReviseConfig(), lam=None,
                      threads=1):
    """Flip fraction of ``reference`` along recourse paths of each target classifier.

    Every sample is pushed toward the class its target model does not
    currently assign. A flip is counted when the reference label at the
    first crossing point differs from its label at the reconstruction
    G(F(x*)). Fractions are over successful recourses only. With
    ``lam=None`` the lambda sweep picks the result per sample.
    """
    x_features = np.atleast_2d(np.asarray(x_features, dtype=np.float64))
    if len(x_features) == 0:
        raise ContractError("no samples to audit")
    if reference.input_dim != generator.schema.encoded_width:
        raise DataError("schema mismatch: reference classifier and generator disagree on width")
    enc = generator.encoder.encode(x_features)
    out = {}
    for name, clf in targets.items():
        want = -predict_labels(clf, enc)
        if lam is None:
            results = lambda_sweep_batch(x_features, clf, generator, config, want, threads=threads).best
        else:
            results = revise_batch(x_features, clf, generator, lam, config, want, threads=threads)
        ok = [r for r in results if r.success and r.crossing >= 0]
        if not ok:
            out[name] = FlipResult(None, 0, 0, len(results))
            continue
        before = predict_labels(reference, np.array([r.start_point for r in ok]))
        at_t = predict_labels(reference, np.array([r.crossing_point for r in ok]))
        flips = int(np.sum(before != at_t))
        out[name] = FlipResult(flips / len(ok), len(ok), flips, len(results))
    return out
