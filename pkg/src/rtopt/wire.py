"""Length-prefixed binary frames for the socket transport.

Every message is one frame, little-endian throughout:

    u32 payload length, u8 tag, payload

Tags:
    1  eval request       u8 phase, u8 want_grad, u8 done, u64 n, f64*n x
                          (done frames carry n = 0 and no x)
    2  partial objective  f64 value, u8 has_grad, f64*n grad
    3  partial constraints u32 count, then per entry:
                          u32 index, f64 value, u8 has_grad, u64 row_nnz,
                          row_nnz * (u32 col, f64 val)
    4  error              u32 worker, u32 term, utf-8 message
                          (0xffffffff marks "no term")
    5  ready              empty payload
    6  handshake          32-byte problem hash, u32 worker_id, u32 num_workers,
                          u64 n_obj, u32*n_obj owners, u64 n_cons, u32*n_cons owners
    7  timing report      u32 worker, f64 matvec, f64 dose_eval, f64 waiting,
                          f64 wall, u64 obj_requests, u64 cons_requests
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import TransportError, WorkerLost

TAG_EVAL_REQUEST = 1
TAG_PARTIAL_OBJECTIVE = 2
TAG_PARTIAL_CONSTRAINTS = 3
TAG_ERROR = 4
TAG_READY = 5
TAG_HANDSHAKE = 6
TAG_TIMING = 7

PHASE_OBJECTIVE = 0
PHASE_CONSTRAINTS = 1

NO_TERM = 0xFFFFFFFF

_FRAME_HEADER = struct.Struct("<IB")
MAX_FRAME_BYTES = 1 << 31


def send_frame(sock, tag: int, payload: bytes) -> None:
    sock.sendall(_FRAME_HEADER.pack(len(payload), tag) + payload)


def _recv_exact(sock, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise WorkerLost("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def recv_frame(sock):
    """Return (tag, payload); raises WorkerLost on EOF or a dead peer."""
    header = _recv_exact(sock, _FRAME_HEADER.size)
    length, tag = _FRAME_HEADER.unpack(header)
    if length > MAX_FRAME_BYTES:
        raise TransportError(f"frame of {length} bytes exceeds sanity limit")
    return tag, _recv_exact(sock, length)


def encode_request(phase: int, want_grad: bool, done: bool, x=None) -> bytes:
    if done:
        return struct.pack("<BBBQ", phase, want_grad, True, 0)
    x = np.ascontiguousarray(x, dtype=np.float64)
    return struct.pack("<BBBQ", phase, want_grad, False, x.shape[0]) + \
        x.astype("<f8").tobytes()


def decode_request(payload: bytes):
    phase, want_grad, done, n = struct.unpack_from("<BBBQ", payload)
    if done:
        return phase, bool(want_grad), True, None
    x = np.frombuffer(payload, dtype="<f8", count=n, offset=11).astype(np.float64)
    return phase, bool(want_grad), False, x


def encode_partial_objective(value: float, grad=None) -> bytes:
    head = struct.pack("<dB", value, grad is not None)
    if grad is None:
        return head
    return head + np.ascontiguousarray(grad, dtype="<f8").tobytes()


def decode_partial_objective(payload: bytes):
    value, has_grad = struct.unpack_from("<dB", payload)
    grad = None
    if has_grad:
        grad = np.frombuffer(payload, dtype="<f8", offset=9).astype(np.float64)
    return value, grad


def encode_partial_constraints(entries) -> bytes:
    """entries: iterable of (index, value, dense_grad_row_or_None)."""
    parts = [struct.pack("<I", len(entries))]
    for index, value, row in entries:
        if row is None:
            parts.append(struct.pack("<IdBQ", index, value, False, 0))
            continue
        row = np.ascontiguousarray(row, dtype=np.float64)
        cols = np.flatnonzero(row)
        parts.append(struct.pack("<IdBQ", index, value, True, cols.shape[0]))
        pairs = np.empty(cols.shape[0], dtype=[("col", "<u4"), ("val", "<f8")])
        pairs["col"] = cols
        pairs["val"] = row[cols]
        parts.append(pairs.tobytes())
    return b"".join(parts)


def decode_partial_constraints(payload: bytes, num_vars: int):
    """Returns list of (index, value, dense_grad_row_or_None)."""
    (count,) = struct.unpack_from("<I", payload)
    offset = 4
    entries = []
    for _ in range(count):
        index, value, has_grad, row_nnz = struct.unpack_from("<IdBQ", payload, offset)
        offset += 21
        row = None
        if has_grad:
            pairs = np.frombuffer(payload, dtype=[("col", "<u4"), ("val", "<f8")],
                                  count=row_nnz, offset=offset)
            offset += 12 * row_nnz
            row = np.zeros(num_vars)
            row[pairs["col"]] = pairs["val"]
        entries.append((index, value, row))
    return entries


def encode_error(worker: int, term, message: str) -> bytes:
    term_code = NO_TERM if term is None else term
    return struct.pack("<II", worker, term_code) + message.encode("utf-8")


def decode_error(payload: bytes):
    worker, term_code = struct.unpack_from("<II", payload)
    term = None if term_code == NO_TERM else term_code
    return worker, term, payload[8:].decode("utf-8", errors="replace")


def encode_handshake(problem_hash: bytes, worker_id: int, num_workers: int,
                     objective_owners, constraint_owners) -> bytes:
    if len(problem_hash) != 32:
        raise TransportError("problem hash must be 32 bytes")
    obj = np.asarray(objective_owners, dtype="<u4")
    cons = np.asarray(constraint_owners, dtype="<u4")
    return (problem_hash
            + struct.pack("<II", worker_id, num_workers)
            + struct.pack("<Q", obj.shape[0]) + obj.tobytes()
            + struct.pack("<Q", cons.shape[0]) + cons.tobytes())


def decode_handshake(payload: bytes):
    problem_hash = payload[:32]
    worker_id, num_workers = struct.unpack_from("<II", payload, 32)
    (n_obj,) = struct.unpack_from("<Q", payload, 40)
    obj = np.frombuffer(payload, dtype="<u4", count=n_obj, offset=48)
    off = 48 + 4 * n_obj
    (n_cons,) = struct.unpack_from("<Q", payload, off)
    cons = np.frombuffer(payload, dtype="<u4", count=n_cons, offset=off + 8)
    return (problem_hash, worker_id, num_workers,
            obj.astype(np.int64).tolist(), cons.astype(np.int64).tolist())


def encode_timing(worker: int, matvec: float, dose_eval: float, waiting: float,
                  wall: float, obj_requests: int, cons_requests: int) -> bytes:
    return struct.pack("<IddddQQ", worker, matvec, dose_eval, waiting, wall,
                       obj_requests, cons_requests)


def decode_timing(payload: bytes):
    return struct.unpack_from("<IddddQQ", payload)
