"""On-disk problem format and small binary vector files.

A problem file is a human-readable JSON manifest followed by the binary
matrix blocks it indexes:

    magic   8 bytes  b"RTOPTPRB"
    version u32      currently 1
    mlen    u64      manifest byte length
    manifest         UTF-8 JSON (indented)
    data section     matrix blocks back to back, in manifest block order

Block offsets in the manifest's table of contents are relative to the start
of the data section. Floats in the manifest are written with Python repr
semantics, so every float64 round-trips bit-exactly.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from . import model
from .errors import ParseError
from .model import FunctionSpec, Roi, TreatmentProblem
from .sparse import (SparseMatrix, block_nbytes, read_block, read_exact,
                     write_block)

MAGIC = b"RTOPTPRB"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<8sIQ")


def _spec_manifest(spec: FunctionSpec, blocks: list) -> dict:
    entry = {"kind": spec.kind}
    if spec.roi is not None:
        entry["roi"] = spec.roi.name
    if spec.role == model.OBJECTIVE:
        entry["weight"] = spec.weight
    else:
        entry["rhs"] = spec.rhs
    if spec.alpha is not None:
        entry["alpha"] = spec.alpha
    if spec.dose_target is not None:
        entry["dose_target"] = spec.dose_target
    if spec.power is not None:
        entry["power"] = spec.power
    if spec.kind == model.QUADRATIC:
        entry["matrix_block"] = len(blocks)
        blocks.append(spec.quad_matrix)
        entry["linear"] = [float(v) for v in spec.quad_linear]
        entry["constant"] = spec.quad_constant
    return entry


def problem_to_bytes(problem: TreatmentProblem) -> bytes:
    """Serialize to the canonical byte form (identical problems -> identical bytes)."""
    blocks: list[SparseMatrix] = []
    rois = []
    for roi in problem.rois:
        rois.append({"name": roi.name, "kind": roi.kind,
                     "voxel_count": roi.voxel_count,
                     "matrix_block": len(blocks)})
        blocks.append(roi.matrix)
    manifest = {
        "format": "rtopt-problem",
        "num_vars": problem.num_vars,
        "rois": rois,
        "objectives": [_spec_manifest(s, blocks) for s in problem.objectives],
        "constraints": [_spec_manifest(s, blocks) for s in problem.constraints],
    }
    toc = []
    offset = 0
    for b in blocks:
        nbytes = block_nbytes(b.rows, b.nnz)
        toc.append({"offset": offset, "nbytes": nbytes})
        offset += nbytes
    manifest["blocks"] = toc

    text = json.dumps(manifest, indent=2).encode("utf-8")
    out = io.BytesIO()
    out.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(text)))
    out.write(text)
    for b in blocks:
        write_block(b, out)
    return out.getvalue()


def save_problem(problem: TreatmentProblem, path) -> None:
    problem.validate()
    data = problem_to_bytes(problem)
    with open(path, "wb") as fh:
        fh.write(data)


def _manifest_get(entry: dict, key: str, where: str):
    if key not in entry:
        raise ParseError(f"{where}: missing field {key!r}")
    return entry[key]


def _spec_from_manifest(entry: dict, role: str, rois_by_name: dict,
                        blocks: list, where: str) -> FunctionSpec:
    kind = _manifest_get(entry, "kind", where)
    spec = FunctionSpec(kind=kind, role=role)
    if "roi" in entry:
        name = entry["roi"]
        if name not in rois_by_name:
            raise ParseError(f"{where}: unknown roi {name!r}")
        spec.roi = rois_by_name[name]
    if role == model.OBJECTIVE:
        spec.weight = float(_manifest_get(entry, "weight", where))
    else:
        spec.rhs = float(_manifest_get(entry, "rhs", where))
    if "alpha" in entry:
        spec.alpha = float(entry["alpha"])
    if "dose_target" in entry:
        spec.dose_target = float(entry["dose_target"])
    if "power" in entry:
        spec.power = float(entry["power"])
    if kind == model.QUADRATIC:
        idx = _manifest_get(entry, "matrix_block", where)
        if not isinstance(idx, int) or not (0 <= idx < len(blocks)):
            raise ParseError(f"{where}: bad matrix_block {idx!r}")
        spec.quad_matrix = blocks[idx]
        spec.quad_linear = np.asarray(_manifest_get(entry, "linear", where),
                                      dtype=np.float64)
        spec.quad_constant = float(_manifest_get(entry, "constant", where))
    return spec


def problem_from_bytes(data: bytes) -> TreatmentProblem:
    fh = io.BytesIO(data)
    header = read_exact(fh, _HEADER.size)
    magic, version, mlen = _HEADER.unpack(header)
    if magic != MAGIC:
        raise ParseError(f"bad magic at byte 0: {magic!r}")
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported format version {version}")
    try:
        manifest = json.loads(read_exact(fh, mlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"manifest is not valid JSON: {exc}") from exc

    toc = _manifest_get(manifest, "blocks", "manifest")
    data_start = fh.tell()
    blocks = []
    for i, entry in enumerate(toc):
        fh.seek(data_start + _manifest_get(entry, "offset", f"blocks[{i}]"))
        blocks.append(read_block(fh))

    rois = []
    rois_by_name = {}
    for i, entry in enumerate(_manifest_get(manifest, "rois", "manifest")):
        where = f"rois[{i}]"
        idx = _manifest_get(entry, "matrix_block", where)
        if not isinstance(idx, int) or not (0 <= idx < len(blocks)):
            raise ParseError(f"{where}: bad matrix_block {idx!r}")
        roi = Roi(name=_manifest_get(entry, "name", where),
                  kind=_manifest_get(entry, "kind", where),
                  voxel_count=int(_manifest_get(entry, "voxel_count", where)),
                  matrix=blocks[idx])
        rois.append(roi)
        rois_by_name[roi.name] = roi

    objectives = [
        _spec_from_manifest(e, model.OBJECTIVE, rois_by_name, blocks,
                            f"objectives[{i}]")
        for i, e in enumerate(_manifest_get(manifest, "objectives", "manifest"))]
    constraints = [
        _spec_from_manifest(e, model.CONSTRAINT, rois_by_name, blocks,
                            f"constraints[{i}]")
        for i, e in enumerate(_manifest_get(manifest, "constraints", "manifest"))]

    problem = TreatmentProblem(
        num_vars=int(_manifest_get(manifest, "num_vars", "manifest")),
        rois=rois, objectives=objectives, constraints=constraints)
    return problem.validate()


def load_problem(path) -> TreatmentProblem:
    """Load and validate a problem file.

    Raises ParseError for malformed bytes and ValidationError when the
    decoded problem breaks a model invariant.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    return problem_from_bytes(data)


# Solution vectors: u64 length, then f64 entries (little-endian).

def write_vector(path, x: np.ndarray) -> None:
    x = np.asarray(x, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", x.shape[0]))
        fh.write(x.astype("<f8").tobytes())


def read_vector(path) -> np.ndarray:
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<Q", read_exact(fh, 8))
        return np.frombuffer(read_exact(fh, 8 * n), dtype="<f8").astype(np.float64)
