"""Versioned binary container for a trained pipeline.

Layout (all integers little-endian)::

    b"MALPIPE1"  u32 version  u32 n_sections
    n_sections x (u32 name_len, name, u64 offset, u64 length, u32 crc32)
    section payloads

A payload is a run of fields ``(u32 name_len, name, u8 tag, body)``. Tag
``A`` is an array: ``u32 ndim``, ``ndim`` x ``u64`` dims, then float64
data. Tag ``T`` is ``u32 length`` plus UTF-8 text; structured metadata is
stored as JSON text with sorted keys.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import lda as lda_mod
from . import mlp as mlp_mod
from . import svm as svm_mod
from .dataio import PreprocessModel
from .errors import CorruptionError, FormatError, MalpipeError, PersistenceError, ShapeError, VersionError

MAGIC = b"MALPIPE1"
FORMAT_VERSION = 1
SECTIONS = ("preprocess", "mlp", "lda", "svm", "config")

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


@dataclass
class ModelBundle:
    preprocess: PreprocessModel
    mlp: mlp_mod.MlpModel
    lda: lda_mod.LdaModel
    svm: svm_mod.MulticlassSvm
    config: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def width_problems(self):
        """Human-readable ``(section, message)`` pairs for broken stage links."""
        out = []
        if self.preprocess.k != self.mlp.n_inputs:
            out.append(("mlp", f"preprocess emits {self.preprocess.k} features, MLP expects {self.mlp.n_inputs}"))
        if self.mlp.representation_size != self.lda.n_features:
            out.append(("lda", f"MLP representation {self.mlp.representation_size} != LDA input {self.lda.n_features}"))
        if self.lda.k != self.svm.n_features:
            out.append(("svm", f"LDA k={self.lda.k} != SVM input width {self.svm.n_features}"))
        n_classes = len(self.preprocess.class_names)
        if self.mlp.n_classes != n_classes or len(self.svm.machines) != n_classes:
            out.append(("svm", f"class counts disagree across stages (expected {n_classes})"))
        return out

    def validate(self):
        problems = self.width_problems()
        if problems:
            raise ShapeError("; ".join(msg for _, msg in problems))

    def classify(self, table):
        """``(labels, margins, unseen)`` for the feature columns of ``table``."""
        x, unseen = self.preprocess.transform_features(table)
        z = self.mlp.extract(x)
        labels, margins = self.svm.predict(self.lda.transform(z))
        return labels, margins, unseen


# ---------------------------------------------------------------------------
# encoding


class _Writer:
    def __init__(self):
        self.parts = []

    def _name(self, name):
        raw = name.encode("utf-8")
        self.parts += [_U32.pack(len(raw)), raw]

    def array(self, name, a):
        a = np.asarray(a, dtype="<f8")
        self._name(name)
        self.parts += [b"A", _U32.pack(a.ndim)]
        self.parts += [_U64.pack(d) for d in a.shape]
        self.parts.append(np.ascontiguousarray(a).tobytes())

    def text(self, name, s):
        raw = s.encode("utf-8")
        self._name(name)
        self.parts += [b"T", _U32.pack(len(raw)), raw]

    def json(self, name, obj):
        self.text(name, json.dumps(obj, sort_keys=True, separators=(",", ":")))

    def bytes(self):
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def _take(self, n):
        if self.pos + n > len(self.data):
            raise CorruptionError("payload ends early")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def _u32(self):
        return _U32.unpack(self._take(4))[0]

    def fields(self):
        out = {}
        while self.pos < len(self.data):
            name = self._take(self._u32()).decode("utf-8")
            tag = self._take(1)
            if tag == b"A":
                dims = [_U64.unpack(self._take(8))[0] for _ in range(self._u32())]
                count = int(np.prod(dims, dtype=np.int64)) if dims else 1
                raw = self._take(8 * count)
                out[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)
            elif tag == b"T":
                out[name] = self._take(self._u32()).decode("utf-8")
            else:
                raise CorruptionError(f"unknown field tag {tag!r}")
        return out


def _int_array(a):
    a = np.asarray(a)
    if not np.all(a == np.round(a)):
        raise CorruptionError("index array holds non-integers")
    return a.astype(np.int64)


def _encode_preprocess(p):
    w = _Writer()
    w.json("meta", {
        "label_column": p.label_column,
        "feature_columns": list(p.feature_columns),
        "encodings": {k: list(v) for k, v in p.encodings.items()},
        "class_names": list(p.class_names),
    })
    for name in ("medians", "mins", "maxs", "scores", "selected", "means", "stds"):
        w.array(name, getattr(p, name))
    return w.bytes()


def _decode_preprocess(f):
    meta = json.loads(f["meta"])
    return PreprocessModel(
        label_column=meta["label_column"],
        feature_columns=meta["feature_columns"],
        encodings=meta["encodings"],
        class_names=meta["class_names"],
        medians=f["medians"],
        mins=f["mins"],
        maxs=f["maxs"],
        scores=f["scores"],
        selected=_int_array(f["selected"]),
        means=f["means"],
        stds=f["stds"],
    )


def _encode_mlp(m):
    w = _Writer()
    w.json("config", m.config.to_dict())
    w.json("report", {"epochs": m.report.epochs, "best_epoch": m.report.best_epoch,
                      "stopped_early": m.report.stopped_early})
    for name in mlp_mod.PARAM_NAMES:
        w.array(name, m.params[name])
    return w.bytes()


def _decode_mlp(f):
    report = json.loads(f["report"])
    return mlp_mod.MlpModel(
        {name: f[name] for name in mlp_mod.PARAM_NAMES},
        mlp_mod.MlpConfig(**json.loads(f["config"])),
        mlp_mod.TrainReport(report["epochs"], report["best_epoch"], report["stopped_early"]),
    )


def _encode_lda(m):
    w = _Writer()
    w.array("components", m.components)
    w.array("mean", m.mean)
    w.array("class_means", m.class_means)
    w.array("shrinkage", m.shrinkage)
    w.array("eigenvalues", m.eigenvalues)
    return w.bytes()


def _decode_lda(f):
    return lda_mod.LdaModel(f["components"], f["mean"], f["class_means"], float(f["shrinkage"]), f["eigenvalues"])


def _encode_svm(m):
    w = _Writer()
    w.json("meta", {"config": m.config.to_dict(), "class_names": list(m.class_names)})
    for i, machine in enumerate(m.machines):
        w.json(f"m{i}.kernel", {"kind": machine.kernel.kind, "gamma": machine.kernel.gamma})
        w.array(f"m{i}.scalars", [machine.b, machine.gamma])
        w.array(f"m{i}.sv", machine.support_vectors)
        w.array(f"m{i}.coef", machine.dual_coef)
    return w.bytes()


def _decode_svm(f):
    meta = json.loads(f["meta"])
    machines = []
    for i in range(len(meta["class_names"])):
        kernel = svm_mod.KernelSpec(**json.loads(f[f"m{i}.kernel"]))
        b, gamma = f[f"m{i}.scalars"]
        sv = f[f"m{i}.sv"]
        coef = f[f"m{i}.coef"]
        if sv.ndim != 2 or coef.shape != (sv.shape[0],):
            raise CorruptionError(f"machine {i}: support vectors and coefficients disagree")
        machines.append(svm_mod.BinarySvm(sv, coef, float(b), float(gamma), kernel))
    return svm_mod.MulticlassSvm(machines, meta["class_names"], svm_mod.SvmConfig(**meta["config"]))


def encode(bundle):
    """Serialise a validated bundle to bytes."""
    bundle.validate()
    payloads = {
        "preprocess": _encode_preprocess(bundle.preprocess),
        "mlp": _encode_mlp(bundle.mlp),
        "lda": _encode_lda(bundle.lda),
        "svm": _encode_svm(bundle.svm),
        "config": json.dumps(bundle.config, sort_keys=True, separators=(",", ":")).encode("utf-8"),
    }
    names = [n.encode("utf-8") for n in SECTIONS]
    header_len = len(MAGIC) + 8 + sum(4 + len(n) + 8 + 8 + 4 for n in names)
    table, offset = [], header_len
    for raw, name in zip(names, SECTIONS):
        body = payloads[name]
        table += [_U32.pack(len(raw)), raw, _U64.pack(offset), _U64.pack(len(body)),
                  _U32.pack(zlib.crc32(body))]
        offset += len(body)
    head = MAGIC + _U32.pack(FORMAT_VERSION) + _U32.pack(len(SECTIONS))
    return head + b"".join(table) + b"".join(payloads[n] for n in SECTIONS)


def persist(bundle, path):
    """Write atomically: a temporary file in the target directory is renamed into place."""
    data = encode(bundle)
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".bundle-")
    except OSError as exc:
        raise PersistenceError(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise PersistenceError(f"cannot write {path}: {exc}") from exc
    return path


def _section_table(data):
    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        if MAGIC.startswith(data[:len(MAGIC)]) and len(data) < len(MAGIC):
            raise CorruptionError("file truncated inside the magic header")
        raise FormatError(f"bad magic {data[:len(MAGIC)]!r}; not a MALPIPE1 container")
    reader = _Reader(data)
    reader.pos = len(MAGIC)
    try:
        version = reader._u32()
        if version > FORMAT_VERSION:
            raise VersionError(f"container version {version} is newer than supported {FORMAT_VERSION}")
        if version < 1:
            raise FormatError(f"invalid container version {version}")
        entries = {}
        for _ in range(reader._u32()):
            name = reader._take(reader._u32()).decode("utf-8")
            offset = _U64.unpack(reader._take(8))[0]
            length = _U64.unpack(reader._take(8))[0]
            crc = reader._u32()
            entries[name] = (offset, length, crc)
    except CorruptionError as exc:
        raise CorruptionError(f"section table: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise CorruptionError(f"section table: {exc}") from exc
    return entries


def decode(data):
    """Rebuild a bundle from bytes, re-checking every invariant."""
    entries = _section_table(data)
    payloads = {}
    for name in SECTIONS:
        if name not in entries:
            raise CorruptionError(f"section {name!r} is missing")
        offset, length, crc = entries[name]
        body = data[offset:offset + length]
        if len(body) != length:
            raise CorruptionError(f"section {name!r} is truncated")
        if zlib.crc32(body) != crc:
            raise CorruptionError(f"section {name!r} fails its checksum")
        payloads[name] = body
    decoders = {"preprocess": _decode_preprocess, "mlp": _decode_mlp, "lda": _decode_lda, "svm": _decode_svm}
    parts = {}
    for name, fn in decoders.items():
        try:
            parts[name] = fn(_Reader(payloads[name]).fields())
        except (MalpipeError, ValueError, KeyError, TypeError, struct.error) as exc:
            raise CorruptionError(f"section {name!r}: {exc}") from exc
    try:
        config = json.loads(payloads["config"].decode("utf-8"))
    except ValueError as exc:
        raise CorruptionError(f"section 'config': {exc}") from exc
    bundle = ModelBundle(parts["preprocess"], parts["mlp"], parts["lda"], parts["svm"], config)
    problems = bundle.width_problems()
    if problems:
        section, msg = problems[0]
        raise CorruptionError(f"section {section!r}: {msg}")
    return bundle


def restore(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise PersistenceError(f"cannot read {path}: {exc}") from exc
    return decode(data)
