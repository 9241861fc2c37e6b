"""On-disk formats: dataset CSV, model-library JSON, posterior archive, JSON reports."""
from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import fields
from pathlib import Path

import jsonschema
import numpy as np

from .. import __version__
from ..core import Dataset, SubjectRecord
from ..errors import SchemaError, SpecError
from ..jointmodel import FormSpec, JointModel, JointModelSpec, PosteriorDraws, PriorSpec
from ..numerics import SplineBasis
from ..simulate import HORIZON

BASE_COLUMNS = ("id", "time", "value", "obs_time", "event")
ARCHIVE_MAGIC = b"JMSLPOST"
ARCHIVE_VERSION = 1


# ---------------------------------------------------------------------------
# dataset CSV

def _parse_id(text: str):
    """Integer ids round-trip as integers, anything else stays a string."""
    try:
        value = int(text)
    except ValueError:
        return text
    return value if str(value) == text else text


def dataset_to_csv(data: Dataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(BASE_COLUMNS + data.covariate_names)
    for s in data:
        covs = [repr(float(w)) for w in s.covariates]
        for t, y in zip(s.times, s.values):
            writer.writerow([s.id, repr(float(t)), repr(float(y)), repr(s.obs_time), s.event, *covs])
    return buf.getvalue()


def dataset_from_csv(text: str) -> Dataset:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise SchemaError("empty dataset file", "/header")
    header = tuple(rows[0])
    if header[:5] != BASE_COLUMNS:
        raise SchemaError(f"header must start with {','.join(BASE_COLUMNS)}, got {','.join(header)}", "/header")
    cov_names = header[5:]
    groups: dict = {}
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise SchemaError(f"expected {len(header)} fields, got {len(row)}", f"/row/{line}")
        try:
            sid = _parse_id(row[0])
            t, y, T = float(row[1]), float(row[2]), float(row[3])
            ev = int(row[4])
            w = tuple(float(v) for v in row[5:])
        except ValueError as exc:
            raise SchemaError(str(exc), f"/row/{line}") from None
        g = groups.setdefault(sid, {"times": [], "values": [], "obs": (T, ev, w), "line": line})
        if g["obs"] != (T, ev, w):
            raise SchemaError(f"subject {sid!r}: obs_time, event and covariates must repeat", f"/row/{line}")
        g["times"].append(t)
        g["values"].append(y)
    subjects = []
    for sid, g in groups.items():
        T, ev, w = g["obs"]
        try:
            subjects.append(SubjectRecord(sid, w, g["times"], g["values"], T, ev))
        except SpecError as exc:
            raise SchemaError(str(exc), f"/row/{g['line']}") from None
    return Dataset(tuple(subjects), cov_names)


def write_dataset(path: Path, data: Dataset) -> None:
    Path(path).write_bytes(dataset_to_csv(data).encode("utf-8"))


def read_dataset(path: Path) -> Dataset:
    return dataset_from_csv(Path(path).read_bytes().decode("utf-8"))


# ---------------------------------------------------------------------------
# model library JSON

FORM_NAMES = ["value", "slope", "area", "random-effects"]
_PRIOR_NAMES = [f.name for f in fields(PriorSpec)]
_positive = {"type": "number", "exclusiveMinimum": 0}
_str_list = {"type": "array", "items": {"type": "string"}}

MODEL_SCHEMA = {
    "type": "object",
    "required": ["name", "functional_form"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "trajectory": {"enum": ["linear", "spline"]},
        "spline": {
            "type": "object", "required": ["degree", "knots"], "additionalProperties": False,
            "properties": {
                "degree": {"type": "integer", "minimum": 0},
                "knots": {"type": "array", "items": {"type": "number"}},
                "boundary": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
            },
        },
        "functional_form": {"oneOf": [{"enum": FORM_NAMES},
                                      {"type": "array", "items": {"enum": FORM_NAMES}, "minItems": 1}]},
        "area_v": {"oneOf": [_positive, {"const": "t"}]},
        "covariates": _str_list,
        "hazard_covariates": _str_list,
        "random_effects": {"type": "boolean"},
        "baseline": {
            "type": "object", "additionalProperties": False,
            "properties": {"degree": {"type": "integer", "minimum": 0},
                           "interior_knots": {"type": "integer", "minimum": 1},
                           "penalty_order": {"type": "integer", "minimum": 1}},
        },
        "priors": {"type": "object", "additionalProperties": False,
                   "properties": {k: _positive for k in _PRIOR_NAMES}},
    },
}
LIBRARY_SCHEMA = {"type": "array", "minItems": 1, "items": MODEL_SCHEMA}


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def _validate(doc, schema, prefix=()):
    error = jsonschema.exceptions.best_match(jsonschema.Draft202012Validator(schema).iter_errors(doc))
    if error is not None:
        raise SchemaError(error.message, _pointer((*prefix, *error.absolute_path)))


def spec_from_json(doc: dict, prefix=()) -> JointModelSpec:
    _validate(doc, MODEL_SCHEMA, prefix)
    forms = doc["functional_form"]
    forms = [forms] if isinstance(forms, str) else forms
    window = doc.get("area_v", "t")
    window = None if window == "t" else float(window)
    spline = None
    traj = doc.get("trajectory", "linear")
    try:
        if "spline" in doc:
            sp = doc["spline"]
            spline = SplineBasis(tuple(sp["knots"]), tuple(sp.get("boundary", (0.0, HORIZON))), sp["degree"])
        base = doc.get("baseline", {})
        return JointModelSpec(
            name=doc["name"], trajectory=traj, spline=spline if traj == "spline" else None,
            long_covariates=tuple(doc.get("covariates", ())),
            forms=tuple(FormSpec(f, window if f == "area" else None) for f in forms),
            hazard_covariates=tuple(doc.get("hazard_covariates", ())),
            baseline_degree=base.get("degree", 3), baseline_interior_knots=base.get("interior_knots", 5),
            penalty_order=base.get("penalty_order", 2), random_effects=doc.get("random_effects", True),
            priors=PriorSpec(**doc.get("priors", {})))
    except (SpecError, ValueError) as exc:
        raise SchemaError(str(exc), _pointer(prefix)) from None


def spec_to_json(spec: JointModelSpec) -> dict:
    doc = {"name": spec.name, "trajectory": spec.trajectory,
           "functional_form": [f.kind for f in spec.forms]}
    if spec.spline is not None and spec.trajectory == "spline":
        doc["spline"] = {"degree": spec.spline.degree, "knots": list(spec.spline.interior),
                         "boundary": list(spec.spline.boundary)}
    areas = [f for f in spec.forms if f.kind == "area"]
    if areas:
        doc["area_v"] = "t" if areas[0].window is None else areas[0].window
    doc["covariates"] = list(spec.long_covariates)
    doc["hazard_covariates"] = list(spec.hazard_covariates)
    doc["random_effects"] = spec.random_effects
    doc["baseline"] = {"degree": spec.baseline_degree, "interior_knots": spec.baseline_interior_knots,
                       "penalty_order": spec.penalty_order}
    doc["priors"] = {k: getattr(spec.priors, k) for k in _PRIOR_NAMES}
    return doc


def library_from_json(text: str):
    """``[(name, JointModelSpec), ...]`` from a library JSON document."""
    from ..superlearn import ModelLibrary

    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg} at line {exc.lineno}", "") from None
    _validate(doc, LIBRARY_SCHEMA)
    members, seen = [], set()
    for k, item in enumerate(doc):
        if item["name"] in seen:
            raise SchemaError(f"duplicate model name {item['name']!r}", f"/{k}/name")
        seen.add(item["name"])
        members.append((item["name"], spec_from_json(item, (k,))))
    if len(members) < 2:
        raise SchemaError("a library needs at least two models", "")
    return ModelLibrary(tuple(members))


def library_to_json(library) -> str:
    return json.dumps([spec_to_json(s) for _, s in library.members], indent=2) + "\n"


def model_spec_from_json(text: str) -> JointModelSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg} at line {exc.lineno}", "") from None
    return spec_from_json(doc)


# ---------------------------------------------------------------------------
# posterior archive: magic, u64 header length, JSON header, length-prefixed float64 sections

def _basis_json(b: SplineBasis) -> dict:
    return {"interior": list(b.interior), "boundary": list(b.boundary), "degree": b.degree}


def posterior_to_bytes(post: PosteriorDraws, provenance: dict | None = None) -> bytes:
    m = post.model
    sections = [(name, np.ascontiguousarray(getattr(post, name), dtype="<f8")) for name in PosteriorDraws.PARAMS]
    header = {
        "version": ARCHIVE_VERSION, "tool_version": __version__,
        "spec": spec_to_json(m.spec), "baseline": _basis_json(m.baseline),
        "covariate_names": list(m.covariate_names), "subject_ids": list(post.subject_ids),
        "acceptance": post.acceptance, "meta": post.meta, "provenance": provenance or {},
        "sections": [{"name": n, "shape": list(a.shape)} for n, a in sections],
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    out = [ARCHIVE_MAGIC, struct.pack("<Q", len(head)), head]
    for _, arr in sections:
        raw = arr.tobytes()
        out += [struct.pack("<Q", len(raw)), raw]
    return b"".join(out)


def posterior_from_bytes(blob: bytes) -> tuple[PosteriorDraws, dict]:
    if blob[:8] != ARCHIVE_MAGIC:
        raise SchemaError("not a posterior archive", "/magic")
    (n,) = struct.unpack_from("<Q", blob, 8)
    header = json.loads(blob[16:16 + n].decode("utf-8"))
    if header.get("version") != ARCHIVE_VERSION:
        raise SchemaError(f"unsupported archive version {header.get('version')!r}", "/version")
    pos, arrays = 16 + n, {}
    for sec in header["sections"]:
        (size,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        arrays[sec["name"]] = np.frombuffer(blob[pos:pos + size], dtype="<f8").reshape(sec["shape"]).copy()
        pos += size
    bl = header["baseline"]
    model = JointModel(spec_from_json(header["spec"]), SplineBasis(tuple(bl["interior"]), tuple(bl["boundary"]),
                                                                   bl["degree"]), tuple(header["covariate_names"]))
    post = PosteriorDraws(model, **arrays, subject_ids=tuple(header["subject_ids"]),
                          acceptance=header["acceptance"], meta=header["meta"])
    return post, header


# ---------------------------------------------------------------------------
# JSON helpers

def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)  # "inf", "-inf" or "nan": keeps the document valid JSON
    return obj


def dump_json(doc) -> str:
    return json.dumps(to_jsonable(doc), indent=2, sort_keys=True) + "\n"
