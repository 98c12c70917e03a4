"""Leader/follower evaluation of objectives, constraints, and gradients.

One leader drives K followers. Followers block until the leader broadcasts
the current variables, each computes partial results for the terms it owns,
and the leader aggregates the replies in ascending worker-id order so the
result is deterministic. K = 0 degenerates to plain serial evaluation in
the leader, which doubles as the reference path for equivalence tests.

Two transports: in-process threads (the evaluation kernels release the GIL,
so threads genuinely run in parallel) and TCP sockets with one follower
process per worker, framed per `wire`.
"""

from __future__ import annotations

import os
import queue
import socket
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import wire
from .errors import (ConfigError, DimensionMismatch, DomainError, EvalError,
                     TransportError, WorkerLost)
from .functions import (EvalTimer, constraint_partial,
                        weighted_objective_partial)
from .model import TreatmentProblem
from .partition import WorkerAssignment
from .wire import PHASE_CONSTRAINTS, PHASE_OBJECTIVE

__all__ = ["EvalRequest", "PartialResult", "EvalResult", "WorkerTiming",
           "TimingRecord", "EngineHandle", "start_workers", "amdahl_predict",
           "run_socket_worker"]


@dataclass
class EvalRequest:
    """One broadcast from the leader; done=True carries no x."""

    phase: int
    want_grad: bool
    done: bool
    x: np.ndarray | None = None


@dataclass
class PartialResult:
    """One worker's reply for one phase."""

    worker_id: int
    phase: int
    partial_value: float | None = None
    partial_grad: np.ndarray | None = None
    constraint_entries: list | None = None
    error: tuple | None = None  # (term_id_or_None, message)


@dataclass
class EvalResult:
    objective: float
    objective_grad: np.ndarray | None
    constraint_values: np.ndarray
    constraint_jacobian: list | None


@dataclass
class WorkerTiming:
    worker_id: int
    matvec_seconds: float = 0.0
    dose_eval_seconds: float = 0.0
    waiting_seconds: float = 0.0
    wall_seconds: float = 0.0
    objective_requests: int = 0
    constraint_requests: int = 0

    @property
    def busy_seconds(self) -> float:
        return self.matvec_seconds + self.dose_eval_seconds


@dataclass
class TimingRecord:
    workers: list = field(default_factory=list)
    wall_seconds: float = 0.0
    evaluations: int = 0


def amdahl_predict(t_serial_component: float, t_parallel_component: float,
                   num_workers: int) -> float:
    """Predicted wall time with the parallel component split K ways."""
    if num_workers < 1:
        raise ConfigError("amdahl_predict requires num_workers >= 1")
    return t_serial_component + t_parallel_component / num_workers


class EngineHandle:
    """Owner of K followers; evaluate() and shutdown() drive the protocol."""

    def __init__(self, problem: TreatmentProblem):
        self._problem = problem
        self._started = time.perf_counter()
        self._evaluations = 0
        self._record: TimingRecord | None = None

    @property
    def problem(self) -> TreatmentProblem:
        return self._problem

    @property
    def num_workers(self) -> int:
        raise NotImplementedError

    def evaluate(self, x, want_grad: bool = True) -> EvalResult:
        raise NotImplementedError

    def shutdown(self) -> TimingRecord:
        raise NotImplementedError

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()
        return False

    def _check_x(self, x) -> np.ndarray:
        if self._record is not None:
            raise TransportError("engine is shut down")
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.shape != (self._problem.num_vars,):
            raise DimensionMismatch(
                f"x has shape {x.shape}, problem has {self._problem.num_vars} variables")
        if not np.all(np.isfinite(x)):
            raise DomainError("x contains non-finite values")
        return x

    def _finish_record(self, workers) -> TimingRecord:
        self._record = TimingRecord(workers=workers,
                                    wall_seconds=time.perf_counter() - self._started,
                                    evaluations=self._evaluations)
        return self._record


class _SerialEngine(EngineHandle):
    """K = 0: the leader evaluates everything itself, in problem order."""

    num_workers = 0

    def evaluate(self, x, want_grad: bool = True) -> EvalResult:
        x = self._check_x(x)
        p = self._problem
        objective, grad = weighted_objective_partial(
            p, range(len(p.objectives)), x, want_grad)
        values = np.empty(len(p.constraints))
        rows = [None] * len(p.constraints) if want_grad else None
        for idx, value, row in constraint_partial(
                p, range(len(p.constraints)), x, want_grad):
            values[idx] = value
            if want_grad:
                rows[idx] = row
        self._evaluations += 1
        return EvalResult(objective, grad if want_grad else None, values, rows)

    def shutdown(self) -> TimingRecord:
        if self._record is not None:
            return self._record
        return self._finish_record([])


def _aggregate(problem, partials_obj, partials_cons, want_grad) -> EvalResult:
    """Combine per-worker partials; worker-id order is fixed by the caller."""
    objective = 0.0
    grad = np.zeros(problem.num_vars) if want_grad else None
    for part in partials_obj:
        objective += part.partial_value
        if want_grad:
            grad += part.partial_grad
    n_cons = len(problem.constraints)
    values = np.full(n_cons, np.nan)
    rows = [None] * n_cons if want_grad else None
    if partials_cons is not None:
        for part in partials_cons:
            for idx, value, row in part.constraint_entries:
                if not np.isnan(values[idx]):
                    raise EvalError(f"constraint {idx} reported twice",
                                    worker_id=part.worker_id)
                values[idx] = value
                if want_grad:
                    rows[idx] = row
        if n_cons and np.any(np.isnan(values)):
            missing = int(np.flatnonzero(np.isnan(values))[0])
            raise EvalError(f"constraint {missing} missing from worker replies")
    else:
        values = np.zeros(0)
        rows = [] if want_grad else None
    return EvalResult(objective, grad, values, rows)


def _raise_worker_error(part: PartialResult):
    term_id, message = part.error
    raise EvalError(message, worker_id=part.worker_id, term_id=term_id)


def _worker_compute(problem, owned_obj, owned_cons, req: EvalRequest,
                    worker_id: int, timer: EvalTimer) -> PartialResult:
    """Shared follower computation for both transports."""
    try:
        if req.phase == PHASE_OBJECTIVE:
            value, grad = weighted_objective_partial(
                problem, owned_obj, req.x, req.want_grad, timer)
            return PartialResult(worker_id, req.phase, partial_value=value,
                                 partial_grad=grad)
        entries = constraint_partial(problem, owned_cons, req.x,
                                     req.want_grad, timer)
        return PartialResult(worker_id, req.phase, constraint_entries=entries)
    except EvalError as exc:
        return PartialResult(worker_id, req.phase,
                             error=(exc.term_id, exc.message))
    except Exception as exc:  # surfaced to the leader instead of killing the worker
        return PartialResult(worker_id, req.phase, error=(None, repr(exc)))


class _ThreadEngine(EngineHandle):
    """K follower threads sharing the problem read-only."""

    def __init__(self, problem: TreatmentProblem, assignment: WorkerAssignment):
        super().__init__(problem)
        self._assignment = assignment
        k = assignment.num_workers
        self._inboxes = [queue.Queue() for _ in range(k)]
        self._outboxes = [queue.Queue() for _ in range(k)]
        self._timings: list[WorkerTiming | None] = [None] * k
        self._threads = []
        for w in range(k):
            t = threading.Thread(
                target=self._worker_loop, args=(w,),
                name=f"rtopt-worker-{w}", daemon=True)
            t.start()
            self._threads.append(t)

    @property
    def num_workers(self) -> int:
        return self._assignment.num_workers

    def _worker_loop(self, worker_id: int):
        problem = self._problem
        owned_obj = self._assignment.owned_objectives(worker_id)
        owned_cons = self._assignment.owned_constraints(worker_id)
        inbox = self._inboxes[worker_id]
        outbox = self._outboxes[worker_id]
        timer = EvalTimer()
        timing = WorkerTiming(worker_id)
        start = time.perf_counter()
        while True:
            t0 = time.perf_counter()
            req = inbox.get()
            timing.waiting_seconds += time.perf_counter() - t0
            if req.done:
                break
            if req.phase == PHASE_OBJECTIVE:
                timing.objective_requests += 1
            else:
                timing.constraint_requests += 1
            outbox.put(_worker_compute(problem, owned_obj, owned_cons, req,
                                       worker_id, timer))
        timing.matvec_seconds = timer.matvec_seconds
        timing.dose_eval_seconds = timer.dose_eval_seconds
        timing.wall_seconds = time.perf_counter() - start
        self._timings[worker_id] = timing

    def _phase(self, phase: int, want_grad: bool, x: np.ndarray) -> list:
        req = EvalRequest(phase, want_grad, False, x)
        for inbox in self._inboxes:
            inbox.put(req)
        partials = [self._outboxes[w].get() for w in range(self.num_workers)]
        for part in partials:
            if part.error is not None:
                _raise_worker_error(part)
        return partials

    def evaluate(self, x, want_grad: bool = True) -> EvalResult:
        x = self._check_x(x)
        partials_obj = self._phase(PHASE_OBJECTIVE, want_grad, x)
        partials_cons = None
        if self._problem.constraints:
            partials_cons = self._phase(PHASE_CONSTRAINTS, want_grad, x)
        self._evaluations += 1
        return _aggregate(self._problem, partials_obj, partials_cons, want_grad)

    def shutdown(self) -> TimingRecord:
        if self._record is not None:
            return self._record
        done = EvalRequest(PHASE_OBJECTIVE, False, True)
        for inbox in self._inboxes:
            inbox.put(done)
        for t in self._threads:
            t.join()
        return self._finish_record([t for t in self._timings if t is not None])


class _SocketEngine(EngineHandle):
    """K follower processes over TCP; frames per the wire module."""

    def __init__(self, problem: TreatmentProblem, assignment: WorkerAssignment,
                 listen=None, timeout: float = 5.0, problem_path=None,
                 worker_args=None):
        super().__init__(problem)
        self._assignment = assignment
        self._timeout = timeout
        self._sockets: list[socket.socket] = []
        self._procs: list[subprocess.Popen] = []
        self._tempfile = None

        if problem_path is None:
            from .fileio import save_problem

            fd, problem_path = tempfile.mkstemp(suffix=".rtp", prefix="rtopt-")
            os.close(fd)
            save_problem(problem, problem_path)
            self._tempfile = problem_path

        host, port = listen if listen is not None else ("127.0.0.1", 0)
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        try:
            server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            try:
                server.bind((host, port))
            except OSError as exc:
                raise TransportError(f"cannot bind {host}:{port}: {exc}") from exc
            server.listen(assignment.num_workers)
            server.settimeout(max(timeout, 10.0))
            addr = f"{server.getsockname()[0]}:{server.getsockname()[1]}"

            cmd = worker_args or [sys.executable, "-m", "rtopt", "worker"]
            for _ in range(assignment.num_workers):
                self._procs.append(subprocess.Popen(
                    cmd + ["--connect", addr, "--problem", str(problem_path)]))

            problem_hash = problem.content_hash()
            n_obj = len(problem.objectives)
            n_cons = len(problem.constraints)
            obj_owners = [assignment.objective_owner[i] for i in range(n_obj)]
            cons_owners = [assignment.constraint_owner[i] for i in range(n_cons)]
            for w in range(assignment.num_workers):
                try:
                    conn, _ = server.accept()
                except socket.timeout:
                    raise TransportError(
                        f"worker {w} did not connect within {max(timeout, 10.0):g}s")
                conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                conn.settimeout(timeout)
                wire.send_frame(conn, wire.TAG_HANDSHAKE, wire.encode_handshake(
                    problem_hash, w, assignment.num_workers, obj_owners, cons_owners))
                try:
                    tag, payload = wire.recv_frame(conn)
                except (WorkerLost, socket.timeout) as exc:
                    raise TransportError(f"worker {w} handshake failed: {exc}") from exc
                if tag == wire.TAG_ERROR:
                    _, _, message = wire.decode_error(payload)
                    raise TransportError(f"worker {w} rejected handshake: {message}")
                if tag != wire.TAG_READY:
                    raise TransportError(f"worker {w} sent unexpected tag {tag}")
                self._sockets.append(conn)
        except Exception:
            server.close()
            self._cleanup()
            raise
        server.close()

    @property
    def num_workers(self) -> int:
        return self._assignment.num_workers

    def _phase(self, phase: int, want_grad: bool, x: np.ndarray) -> list:
        frame = wire.encode_request(phase, want_grad, False, x)
        for w, sock in enumerate(self._sockets):
            try:
                wire.send_frame(sock, wire.TAG_EVAL_REQUEST, frame)
            except OSError as exc:
                raise WorkerLost(f"worker {w} unreachable: {exc}") from exc
        partials = []
        for w, sock in enumerate(self._sockets):
            try:
                tag, payload = wire.recv_frame(sock)
            except socket.timeout as exc:
                raise WorkerLost(
                    f"worker {w} did not reply within {self._timeout:g}s") from exc
            except (OSError, WorkerLost) as exc:
                raise WorkerLost(f"worker {w} connection lost: {exc}") from exc
            if tag == wire.TAG_ERROR:
                _, term, message = wire.decode_error(payload)
                raise EvalError(message, worker_id=w, term_id=term)
            if phase == PHASE_OBJECTIVE:
                if tag != wire.TAG_PARTIAL_OBJECTIVE:
                    raise WorkerLost(f"worker {w} sent unexpected tag {tag}")
                value, grad = wire.decode_partial_objective(payload)
                partials.append(PartialResult(w, phase, partial_value=value,
                                              partial_grad=grad))
            else:
                if tag != wire.TAG_PARTIAL_CONSTRAINTS:
                    raise WorkerLost(f"worker {w} sent unexpected tag {tag}")
                entries = wire.decode_partial_constraints(
                    payload, self._problem.num_vars)
                partials.append(PartialResult(w, phase,
                                              constraint_entries=entries))
        return partials

    def evaluate(self, x, want_grad: bool = True) -> EvalResult:
        x = self._check_x(x)
        partials_obj = self._phase(PHASE_OBJECTIVE, want_grad, x)
        partials_cons = None
        if self._problem.constraints:
            partials_cons = self._phase(PHASE_CONSTRAINTS, want_grad, x)
        self._evaluations += 1
        return _aggregate(self._problem, partials_obj, partials_cons, want_grad)

    def _cleanup(self):
        for sock in self._sockets:
            try:
                sock.close()
            except OSError:
                pass
        for proc in self._procs:
            if proc.poll() is None:
                proc.terminate()
        for proc in self._procs:
            try:
                proc.wait(timeout=5.0)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
        if self._tempfile is not None and os.path.exists(self._tempfile):
            os.unlink(self._tempfile)

    def shutdown(self) -> TimingRecord:
        if self._record is not None:
            return self._record
        done = wire.encode_request(PHASE_OBJECTIVE, False, True)
        workers = []
        for w, sock in enumerate(self._sockets):
            try:
                wire.send_frame(sock, wire.TAG_EVAL_REQUEST, done)
                tag, payload = wire.recv_frame(sock)
                if tag == wire.TAG_TIMING:
                    (wid, matvec, dose_eval, waiting, wall,
                     n_obj, n_cons) = wire.decode_timing(payload)
                    workers.append(WorkerTiming(
                        wid, matvec, dose_eval, waiting, wall,
                        objective_requests=n_obj, constraint_requests=n_cons))
            except (OSError, WorkerLost, TransportError):
                pass  # dead workers simply drop out of the record
        self._cleanup()
        return self._finish_record(workers)


def start_workers(problem: TreatmentProblem,
                  assignment: WorkerAssignment | None = None,
                  transport: str = "in_process", *,
                  listen=None, timeout: float = 5.0,
                  problem_path=None) -> EngineHandle:
    """Start K followers and return the engine handle.

    assignment=None (or zero workers) degenerates to serial evaluation in
    the leader. The socket transport spawns one follower process per worker
    via self-exec; they load the problem from problem_path (the problem is
    written to a temporary file when no path is given).
    """
    if assignment is None or assignment.num_workers == 0:
        return _SerialEngine(problem)
    if transport == "in_process":
        return _ThreadEngine(problem, assignment)
    if transport == "socket":
        return _SocketEngine(problem, assignment, listen=listen,
                             timeout=timeout, problem_path=problem_path)
    raise ConfigError(f"unknown transport {transport!r}")


def run_socket_worker(problem: TreatmentProblem, connect: tuple) -> int:
    """Follower process main loop: handshake, then serve requests until done."""
    try:
        sock = socket.create_connection(connect, timeout=30.0)
    except OSError as exc:
        print(f"rtopt worker: cannot connect to {connect[0]}:{connect[1]}: {exc}",
              file=sys.stderr)
        return 1
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    sock.settimeout(None)  # followers block indefinitely, like the barrier wait
    start = time.perf_counter()
    try:
        tag, payload = wire.recv_frame(sock)
        if tag != wire.TAG_HANDSHAKE:
            return 1
        (problem_hash, worker_id, num_workers,
         obj_owners, cons_owners) = wire.decode_handshake(payload)
        if problem_hash != problem.content_hash():
            wire.send_frame(sock, wire.TAG_ERROR, wire.encode_error(
                worker_id, None, "problem hash mismatch"))
            return 1
        owned_obj = [i for i, w in enumerate(obj_owners) if w == worker_id]
        owned_cons = [i for i, w in enumerate(cons_owners) if w == worker_id]
        wire.send_frame(sock, wire.TAG_READY, b"")

        timer = EvalTimer()
        timing = WorkerTiming(worker_id)
        while True:
            t0 = time.perf_counter()
            tag, payload = wire.recv_frame(sock)
            timing.waiting_seconds += time.perf_counter() - t0
            if tag != wire.TAG_EVAL_REQUEST:
                return 1
            phase, want_grad, done, x = wire.decode_request(payload)
            if done:
                wire.send_frame(sock, wire.TAG_TIMING, wire.encode_timing(
                    worker_id, timer.matvec_seconds, timer.dose_eval_seconds,
                    timing.waiting_seconds, time.perf_counter() - start,
                    timing.objective_requests, timing.constraint_requests))
                return 0
            if phase == PHASE_OBJECTIVE:
                timing.objective_requests += 1
            else:
                timing.constraint_requests += 1
            req = EvalRequest(phase, want_grad, False, x)
            part = _worker_compute(problem, owned_obj, owned_cons, req,
                                   worker_id, timer)
            if part.error is not None:
                term_id, message = part.error
                wire.send_frame(sock, wire.TAG_ERROR,
                                wire.encode_error(worker_id, term_id, message))
            elif phase == PHASE_OBJECTIVE:
                wire.send_frame(sock, wire.TAG_PARTIAL_OBJECTIVE,
                                wire.encode_partial_objective(
                                    part.partial_value, part.partial_grad))
            else:
                wire.send_frame(sock, wire.TAG_PARTIAL_CONSTRAINTS,
                                wire.encode_partial_constraints(
                                    part.constraint_entries))
    except (WorkerLost, OSError):
        return 1
    finally:
        sock.close()
