"""Plain-text model files.

Layout (one token group per line, values as 17 significant digits)::

    REVISE-MODEL v1
    kind vae
    schema 9
    <schema lines>
    encoder
    mean ...
    std ...
    mad ...
    raw_mad ...
    meta latent_dim=2 conditional=1
    net enc 3
    layer 12 32 tanh
    <weights, row-major>
    <bias>
    ...
    end
"""

from dataclasses import dataclass

import numpy as np

from .causal import CausalDecisionModel
from .data import Encoder
from .errors import DataError, UnsupportedVersionError
from .genmodel import HeterogeneousVAE
from .nn import DenseNetwork, Layer
from .schema import AttributeSchema

MAGIC = "REVISE-MODEL"
VERSION = "v1"
KINDS = ("classifier", "vae", "causal")


@dataclass
class PersistedModel:
    kind: str
    schema: AttributeSchema
    encoder: Encoder
    model: object
    meta: dict


def _vec(v):
    return " ".join("%.17g" % x for x in np.asarray(v, dtype=np.float64).ravel())


def _net_lines(name, net):
    out = [f"net {name} {len(net.layers)}"]
    for layer in net.layers:
        out.append(f"layer {layer.fan_in} {layer.fan_out} {layer.activation}")
        out.append(_vec(layer.weight.data))
        out.append(_vec(layer.bias.data))
    return out


NET_NAMES = {"classifier": ("clf",), "vae": ("enc", "dec"),
             "causal": ("inference", "dec", "treatment", "outcome0", "outcome1")}


def _networks(kind, model):
    if kind == "classifier":
        nets = [model]
    elif kind == "vae":
        nets = [model.enc_net, model.dec_net]
    else:
        nets = [model.inference_net, model.dec_net, model.treatment_net, *model.outcome_nets]
    return list(zip(NET_NAMES[kind], nets))


def _kind_of(model):
    if isinstance(model, DenseNetwork):
        return "classifier"
    if isinstance(model, HeterogeneousVAE):
        return "vae"
    if isinstance(model, CausalDecisionModel):
        return "causal"
    raise DataError(f"cannot persist object of type {type(model).__name__}")


def dumps(model, schema=None, encoder=None):
    kind = _kind_of(model)
    if kind != "classifier":
        schema, encoder = model.schema, model.encoder
    if schema is None or encoder is None:
        raise DataError("classifier files need the schema and encoder they were trained with")
    lines = [f"{MAGIC} {VERSION}", f"kind {kind}"]
    stext = schema.to_text().splitlines()
    lines.append(f"schema {len(stext)}")
    lines += stext
    lines += ["encoder", "mean " + _vec(encoder.mean), "std " + _vec(encoder.std), "mad " + _vec(encoder.mad),
              "raw_mad " + _vec(encoder.raw_mad if encoder.raw_mad is not None else encoder.mad)]
    meta = {}
    if kind != "classifier":
        meta["latent_dim"] = model.latent_dim
    if kind == "vae":
        meta["conditional"] = int(model.conditional)
    lines.append("meta " + " ".join(f"{k}={v}" for k, v in meta.items()))
    for name, net in _networks(kind, model):
        lines += _net_lines(name, net)
    lines.append("end")
    return "\n".join(lines) + "\n"


def save_model(model, path, schema=None, encoder=None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(model, schema, encoder))


class _Reader:
    def __init__(self, text):
        self.lines = text.split("\n")
        self.i = 0
        self.offset = 0
        self.start = 0  # byte offset of the line read last

    def fail(self, what):
        raise DataError(f"truncated or malformed model file at byte {self.start}: {what}")

    def next(self, what):
        self.start = self.offset
        if self.i >= len(self.lines) or (self.i == len(self.lines) - 1 and self.lines[-1] == ""):
            self.fail(f"unexpected end of file, expected {what}")
        line = self.lines[self.i]
        self.i += 1
        self.offset += len(line.encode("utf-8")) + 1
        return line

    def tagged(self, tag):
        line = self.next(tag)
        parts = line.split(" ", 1)
        if parts[0] != tag:
            self.fail(f"expected {tag!r}, found {line[:40]!r}")
        return parts[1] if len(parts) > 1 else ""

    def floats(self, text, n, what):
        try:
            v = np.array([float(t) for t in text.split()], dtype=np.float64)
        except ValueError:
            self.fail(f"non-numeric value in {what}")
        if len(v) != n:
            self.fail(f"{what}: expected {n} values, found {len(v)}")
        return v


def _read_net(rd, expect):
    head = rd.tagged("net").split()
    if len(head) != 2 or head[0] != expect:
        rd.fail(f"expected network {expect!r}")
    layers = []
    for _ in range(int(head[1])):
        spec = rd.tagged("layer").split()
        if len(spec) != 3:
            rd.fail("bad layer line")
        fin, fout, act = int(spec[0]), int(spec[1]), spec[2]
        w = rd.floats(rd.next("weights"), fin * fout, "weights").reshape(fin, fout)
        b = rd.floats(rd.next("bias"), fout, "bias")
        layers.append(Layer(w, b, act))
    return DenseNetwork(layers)


def loads(text):
    rd = _Reader(text)
    try:
        return _parse(rd)
    except (ValueError, KeyError, IndexError) as e:
        if isinstance(e, DataError):
            raise
        rd.fail(f"{type(e).__name__}: {e}")


def _parse(rd):
    first = rd.next("version line").strip()
    magic, _, version = first.partition(" ")
    if magic != MAGIC:
        rd.fail("not a model file")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version!r} (this reader handles {VERSION})")
    kind = rd.tagged("kind").strip()
    if kind not in KINDS:
        rd.fail(f"unknown model kind {kind!r}")
    try:
        n_schema = int(rd.tagged("schema"))
    except ValueError:
        rd.fail("bad schema line count")
    schema = AttributeSchema.from_text("\n".join(rd.next("schema line") for _ in range(n_schema)))
    rd.tagged("encoder")
    nf = schema.n_features
    stats = [rd.floats(rd.tagged(t), nf, t) for t in ("mean", "std", "mad", "raw_mad")]
    encoder = Encoder(schema, *stats)
    meta = dict(kv.split("=", 1) for kv in rd.tagged("meta").split())
    nets = {name: _read_net(rd, name) for name in NET_NAMES[kind]}
    if rd.next("end").strip() != "end":
        rd.fail("missing end marker")
    if kind == "classifier":
        model = nets["clf"]
    elif kind == "vae":
        model = HeterogeneousVAE(schema, encoder, int(meta["latent_dim"]), nets["enc"], nets["dec"],
                                 bool(int(meta["conditional"])))
    else:
        model = CausalDecisionModel(schema, encoder, int(meta["latent_dim"]), nets["inference"], nets["dec"],
                                    nets["treatment"], [nets["outcome0"], nets["outcome1"]])
    return PersistedModel(kind, schema, encoder, model, meta)


def load_model(path, expect_kind=None, schema=None):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise DataError(f"cannot read model file {path}: {e.strerror}") from None
    pm = loads(text)
    if expect_kind is not None and pm.kind != expect_kind:
        raise DataError(f"{path}: expected a {expect_kind} model, found {pm.kind}")
    if schema is not None:
        pm.schema.check_compatible(schema, f"model {path}")
    return pm
