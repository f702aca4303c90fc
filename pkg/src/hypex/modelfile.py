"""YAML model and auxiliary-channel files.

A model file declares the alphabets, M, the detectors' target hypotheses and
one joint pmf per hypothesis.  Pmfs are nested lists indexed [x][y1][y2] or
flat lists in the same X-major order.  A hypothesis may instead name a
preset; ``testing_against_independence`` builds the product of another
hypothesis' single-axis marginals.

Example::

    format: hypex-model/1
    axis_order: [X, Y1, Y2]
    alphabets:
      X: {size: 2}
      Y1: {size: 2}
      Y2: {size: 2}
    M: 2
    i1: 2
    i2: 2
    hypotheses:
      - name: nominal
        pmf: [[[0.2, 0.1], [0.1, 0.1]], [[0.1, 0.1], [0.1, 0.2]]]
      - name: alternative
        preset: testing_against_independence
        of: 1
"""

from __future__ import annotations

import math

import numpy as np
import yaml

from .errors import InvariantViolation, LengthMismatch, ParseError, ValidationError
from .exponents import AuxPair
from .probkit import SOURCE_AXES, Alphabet, Channel, HypothesisModel, JointPmf, testing_against_independence

MODEL_FORMAT = "hypex-model/1"
AUX_FORMAT = "hypex-aux/1"
PRESETS = ("testing_against_independence",)


def _node_line(root, path):
    """1-based line of the YAML node at ``path`` (keys and indices), best effort."""
    node = root
    line = node.start_mark.line + 1 if node is not None else None
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == key:
                    nxt = v
                    break
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            nxt = node.value[key]
        else:
            nxt = None
        if nxt is None:
            break
        node = nxt
        line = node.start_mark.line + 1
    return line


def _field(path) -> str:
    out = ""
    for key in path:
        out += f"[{key}]" if isinstance(key, int) else (f".{key}" if out else str(key))
    return out


class _Reader:
    def __init__(self, text: str, source: str = "<string>"):
        self.source = source
        try:
            self.root = yaml.compose(text)
            self.data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ParseError(f"{source}: invalid YAML: {getattr(exc, 'problem', exc)}",
                             line=mark.line + 1 if mark else None) from None
        if not isinstance(self.data, dict):
            raise ParseError(f"{source}: top level must be a mapping", line=1)

    def fail(self, cls, message, path):
        line = _node_line(self.root, path)
        where = _field(path)
        if cls is ParseError:
            return ParseError(f"{self.source}: {message}", line=line, field=where)
        exc = cls(f"{self.source}: {message} (field {where}, line {line})")
        exc.field, exc.line = where, line
        return exc

    def get(self, path, kind=None, required=True, default=None):
        node = self.data
        for key in path:
            if isinstance(node, dict) and key in node:
                node = node[key]
            elif isinstance(node, list) and isinstance(key, int) and key < len(node):
                node = node[key]
            else:
                if required:
                    raise self.fail(ParseError, f"missing field {_field(path)!r}", path[:-1])
                return default
        if kind is not None and not isinstance(node, kind) or isinstance(node, bool) and kind is int:
            raise self.fail(ParseError, f"field {_field(path)!r} has the wrong type", path)
        return node


def _as_array(reader: _Reader, value, shape, path) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise reader.fail(ParseError, "pmf entries must be numbers in nested or flat lists", path) from None
    if arr.shape == (math.prod(shape),):
        arr = arr.reshape(shape)
    if arr.shape != tuple(shape):
        raise reader.fail(LengthMismatch, f"pmf has shape {arr.shape}, expected {tuple(shape)} or flat length {math.prod(shape)}", path)
    return arr


def _checked_pmf(reader, axes, arr, path) -> JointPmf:
    try:
        return JointPmf(axes, arr)
    except ValidationError as exc:
        raise reader.fail(type(exc), str(exc), path) from None


def parse_model(text: str, source: str = "<string>") -> HypothesisModel:
    r = _Reader(text, source)
    fmt = r.get(("format",), str, required=False, default=MODEL_FORMAT)
    if fmt != MODEL_FORMAT:
        raise r.fail(ParseError, f"unsupported format {fmt!r}", ("format",))
    order = r.get(("axis_order",), list, required=False, default=list(SOURCE_AXES))
    if list(order) != list(SOURCE_AXES):
        raise r.fail(ParseError, f"axis_order must be {list(SOURCE_AXES)}", ("axis_order",))
    alphabets = {}
    for role in SOURCE_AXES:
        size = r.get(("alphabets", role, "size"), int)
        labels = r.get(("alphabets", role, "labels"), list, required=False)
        try:
            alphabets[role] = Alphabet(size, tuple(labels) if labels is not None else None)
        except InvariantViolation as exc:
            raise r.fail(InvariantViolation, str(exc), ("alphabets", role)) from None
    shape = tuple(alphabets[a].size for a in SOURCE_AXES)
    M = r.get(("M",), int)
    i1 = r.get(("i1",), int)
    i2 = r.get(("i2",), int)
    hyps = r.get(("hypotheses",), list)
    problems = []
    if M < 2:
        problems.append(f"M must be >= 2, got {M}")
    if len(hyps) != M:
        problems.append(f"M = {M} but {len(hyps)} hypotheses are listed")
    for name, i in (("i1", i1), ("i2", i2)):
        if not 1 <= i <= max(M, 1):
            problems.append(f"{name} = {i} is not in 1..{M}")
    if problems:
        raise r.fail(InvariantViolation, "; ".join(problems), ("M",))

    pmfs: list = [None] * M
    names = []
    pending = []
    for k, h in enumerate(hyps):
        path = ("hypotheses", k)
        if not isinstance(h, dict):
            raise r.fail(ParseError, "each hypothesis must be a mapping", path)
        name = h.get("name", f"H{k + 1}")
        if not isinstance(name, str):
            raise r.fail(ParseError, "hypothesis name must be a string (quote it if it reads as null or a number)", path + ("name",))
        names.append(name)
        if "pmf" in h and "preset" in h:
            raise r.fail(ParseError, "give either pmf or preset, not both", path)
        if "pmf" in h:
            pmfs[k] = _checked_pmf(r, SOURCE_AXES, _as_array(r, h["pmf"], shape, path + ("pmf",)), path + ("pmf",))
        elif "preset" in h:
            if h["preset"] not in PRESETS:
                raise r.fail(ParseError, f"unknown preset {h['preset']!r}; known: {list(PRESETS)}", path + ("preset",))
            of = r.get(path + ("of",), int)
            if not 1 <= of <= M or of == k + 1:
                raise r.fail(ParseError, f"preset source {of} must be another hypothesis in 1..{M}", path + ("of",))
            pending.append((k, of))
        else:
            raise r.fail(ParseError, "hypothesis needs a pmf or a preset", path)
    for k, of in pending:
        src = pmfs[of - 1]
        if src is None:
            raise r.fail(ParseError, "preset source must itself be an explicit pmf", ("hypotheses", k, "of"))
        pmfs[k] = testing_against_independence(src)
    return HypothesisModel(tuple(pmfs), i1, i2, alphabets, tuple(names))


def load_model(path) -> HypothesisModel:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    return parse_model(text, str(path))


def _float_list(arr):
    return np.asarray(arr, dtype=float).tolist()


def dump_model(model: HypothesisModel) -> str:
    """Canonical YAML for a model; floats use the shortest round-trip repr."""
    alphabets = {}
    for role, size in zip(SOURCE_AXES, model.shape):
        a = model.alphabets.get(role)
        entry = {"size": int(size)}
        if a is not None and a.labels is not None:
            entry["labels"] = list(a.labels)
        alphabets[role] = entry
    names = model.names or tuple(f"H{k}" for k in range(1, model.M + 1))
    doc = {
        "format": MODEL_FORMAT,
        "axis_order": list(SOURCE_AXES),
        "alphabets": alphabets,
        "M": model.M,
        "i1": int(model.i1),
        "i2": int(model.i2),
        "hypotheses": [{"name": str(nm), "pmf": _float_list(p.mass)} for nm, p in zip(names, model.pmfs)],
    }
    header = "# hypex model file; pmf arrays are indexed [x][y1][y2] (X-major)\n"
    return header + yaml.safe_dump(doc, sort_keys=False, default_flow_style=None, width=100)


def _metadata(model: HypothesisModel):
    """Alphabets and names with the defaults a dumped file would spell out."""
    alphabets = tuple(model.alphabets.get(role) or Alphabet(size) for role, size in zip(SOURCE_AXES, model.shape))
    names = model.names or tuple(f"H{k}" for k in range(1, model.M + 1))
    return alphabets, tuple(names)


def models_equal(a: HypothesisModel, b: HypothesisModel) -> bool:
    """Exact equality: same targets, bit-identical pmfs, same labels and names."""
    return (
        a.M == b.M and a.i1 == b.i1 and a.i2 == b.i2
        and all(p == q for p, q in zip(a.pmfs, b.pmfs))
        and _metadata(a) == _metadata(b)
    )


def parse_aux(text: str, shape, source: str = "<string>") -> AuxPair:
    """Auxiliary channels: ``u_channel`` indexed [x][u], ``v_channel`` indexed [y1][u][v].

    Either may be the string ``constant``; ``identity`` means U = X or V = Y1.
    """
    r = _Reader(text, source)
    fmt = r.get(("format",), str, required=False, default=AUX_FORMAT)
    if fmt != AUX_FORMAT:
        raise r.fail(ParseError, f"unsupported format {fmt!r}", ("format",))
    nx, ny1, _ = shape
    u_raw = r.get(("u_channel",))
    if u_raw == "constant":
        u = Channel.constant(("X",), (nx,), "U")
    elif u_raw == "identity":
        u = Channel.identity("X", "U", nx)
    else:
        u = _channel(r, u_raw, ("X",), ("U",), ("u_channel",), (nx,))
    nu = u.output_shape[0]
    v_raw = r.get(("v_channel",))
    if v_raw == "constant":
        v = Channel.constant(("Y1", "U"), (ny1, nu), "V")
    elif v_raw == "identity":
        v = Channel(("Y1", "U"), ("V",), np.broadcast_to(np.eye(ny1)[:, None, :], (ny1, nu, ny1)))
    else:
        v = _channel(r, v_raw, ("Y1", "U"), ("V",), ("v_channel",), (ny1, nu))
    try:
        return AuxPair(u, v)
    except ValidationError as exc:
        raise r.fail(type(exc), str(exc), ("v_channel",)) from None


def _channel(r, raw, ins, outs, path, in_shape) -> Channel:
    try:
        arr = np.array(raw, dtype=float)
    except (TypeError, ValueError):
        raise r.fail(ParseError, "channel entries must be numbers", path) from None
    if arr.ndim != len(in_shape) + 1 or arr.shape[: len(in_shape)] != tuple(in_shape):
        raise r.fail(LengthMismatch, f"channel has shape {arr.shape}; leading dims must be {tuple(in_shape)}", path)
    try:
        return Channel(ins, outs, arr)
    except ValidationError as exc:
        raise r.fail(type(exc), str(exc), path) from None


def load_aux(path, shape) -> AuxPair:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    return parse_aux(text, shape, str(path))


def dump_aux(aux: AuxPair) -> str:
    doc = {
        "format": AUX_FORMAT,
        "u_channel": _float_list(aux.u_channel.mass),
        "v_channel": _float_list(aux.v_channel.mass),
    }
    return "# u_channel[x][u] = P(u|x); v_channel[y1][u][v] = P(v|y1,u)\n" + yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)
