"""Evaluation backends behind one interface.

An evaluator is any object with ``evaluate(req: EvalRequest) -> EvalResult``.
Three are provided: a deterministic synthetic benchmark (for desk-scale
search experiments), a lookup over a bench table of already-trained
architectures, and a client for the external trainer protocol
(line-delimited JSON over a child process's stdio or a TCP connection).
"""

from __future__ import annotations

import json
import math
import shlex
import socket
import subprocess
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .avec import encode, feature_layout
from .distill import PredictionCache
from .space import (
    ArchitectureSpec,
    SearchSpaceConfig,
    SpecError,
    canonical_id,
    space_config_hash,
    validate_spec,
)

PROTO_VERSION = 1


class EvaluationError(RuntimeError):
    pass


class BenchMissError(EvaluationError):
    def __init__(self, arch_id: str):
        super().__init__(f"architecture {arch_id} is not present in the bench table")
        self.arch_id = arch_id


class HandshakeError(EvaluationError):
    pass


class CorrelationError(EvaluationError):
    pass


class EvalTimeoutError(EvaluationError):
    pass


class TrainerError(EvaluationError):
    def __init__(self, code: str, message: str, arch_id: str | None = None):
        super().__init__(f"trainer error {code}: {message}")
        self.code = code
        self.arch_id = arch_id


@dataclass(frozen=True)
class EvalRequest:
    arch_id: str
    spec: ArchitectureSpec
    seed: int
    teacher_ids: tuple[str, ...] = ()
    kd_weight: float = 1.0
    epochs: int = 1


@dataclass(frozen=True)
class EvalResult:
    arch_id: str
    score: float
    metric_name: str
    per_epoch: tuple[float, ...] = ()
    preds_ref: str | None = None

    def __post_init__(self):
        if self.per_epoch and not math.isclose(self.score, max(self.per_epoch),
                                               rel_tol=1e-9, abs_tol=1e-12):
            raise EvaluationError(
                f"score {self.score} is not the best per-epoch value "
                f"{max(self.per_epoch)} for {self.arch_id}"
            )


# ---------------------------------------------------------------- synthetic


class SyntheticEvaluator:
    """score = sigmoid(w.phi + 1/2 phi'Q phi) + noise, with w and a sparse
    symmetric zero-diagonal Q drawn once from bench_seed and the noise drawn
    per (bench_seed, arch_id). Pairwise terms give the surrogate nontrivial
    structure to learn. KD request fields are ignored."""

    metric_name = "synthetic"

    def __init__(self, space: SearchSpaceConfig, bench_seed: int = 0,
                 noise_std: float = 0.0):
        if noise_std < 0:
            raise EvaluationError("noise_std must be non-negative")
        self.space = space
        self.bench_seed = int(bench_seed)
        self.noise_std = float(noise_std)
        self.layout = feature_layout(space)
        rng = np.random.default_rng(self.bench_seed)
        d = len(self.layout)
        self.weights = rng.normal(0.0, 0.35, d)
        mask = np.triu(rng.random((d, d)) < 0.08, k=1)
        self.pair_coeffs = np.where(mask, rng.normal(0.0, 0.35, (d, d)), 0.0)

    def latent_score(self, spec: ArchitectureSpec) -> float:
        phi = encode(spec, self.space, self.layout).as_array()
        raw = float(phi @ self.weights + phi @ self.pair_coeffs @ phi)
        return 1.0 / (1.0 + math.exp(-raw))

    def evaluate(self, req: EvalRequest) -> EvalResult:
        violations = validate_spec(req.spec, self.space)
        if violations:
            raise SpecError("; ".join(violations))
        score = self.latent_score(req.spec)
        if self.noise_std > 0:
            noise_rng = np.random.default_rng(
                [self.bench_seed, int(req.arch_id[:16], 16)]
            )
            score += float(noise_rng.normal(0.0, self.noise_std))
        return EvalResult(arch_id=req.arch_id, score=score,
                          metric_name=self.metric_name, per_epoch=(score,))


# ---------------------------------------------------------------- bench lookup


class BenchLookupEvaluator:
    """Returns stored best scores; no training happens."""

    def __init__(self, records: Sequence, space: SearchSpaceConfig):
        self.space = space
        self.layout = feature_layout(space)
        self.by_id: dict[str, tuple[float, str]] = {}
        self.by_avec: dict[str, tuple[float, str]] = {}
        for rec in records:
            entry = (float(rec.best_score), rec.metric_name)
            if rec.spec is not None:
                self.by_id[canonical_id(rec.spec)] = entry
            self.by_avec["".join(str(b) for b in rec.avec)] = entry

    def evaluate(self, req: EvalRequest) -> EvalResult:
        entry = self.by_id.get(req.arch_id)
        if entry is None:
            key = encode(req.spec, self.space, self.layout).to01()
            entry = self.by_avec.get(key)
        if entry is None:
            raise BenchMissError(req.arch_id)
        score, metric = entry
        return EvalResult(arch_id=req.arch_id, score=score, metric_name=metric,
                          per_epoch=(score,))


# ---------------------------------------------------------------- external


class _Connection:
    """One handshaken protocol channel; concurrent requests are multiplexed
    by arch_id with a single reader thread."""

    def __init__(self, reader, writer, close_fn, space_hash: str):
        self._reader = reader
        self._writer = writer
        self._close_fn = close_fn
        self._write_lock = threading.Lock()
        self._pending_lock = threading.Lock()
        self._pending: dict[str, dict] = {}
        self._events: dict[str, threading.Event] = {}
        self._dead: Exception | None = None
        self._handshake(space_hash)
        self._reader_thread = threading.Thread(target=self._read_loop, daemon=True)
        self._reader_thread.start()

    def _send(self, message: dict) -> None:
        line = json.dumps(message, sort_keys=True) + "\n"
        with self._write_lock:
            self._writer.write(line)
            self._writer.flush()

    def _handshake(self, space_hash: str) -> None:
        self._send({"type": "hello", "proto": PROTO_VERSION, "space_hash": space_hash})
        line = self._reader.readline()
        if not line:
            raise HandshakeError("trainer closed the connection before hello_ok")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise HandshakeError(f"non-JSON handshake reply: {line!r}") from exc
        if reply.get("type") == "error":
            raise HandshakeError(
                f"handshake rejected: {reply.get('code')}: {reply.get('message')}")
        if reply.get("type") != "hello_ok" or reply.get("proto") != PROTO_VERSION:
            raise HandshakeError(f"unexpected handshake reply: {reply}")
        if reply.get("space_hash") != space_hash:
            raise HandshakeError(
                f"search-space hash mismatch: ours {space_hash}, trainer {reply.get('space_hash')}")

    def _read_loop(self) -> None:
        try:
            for line in self._reader:
                line = line.strip()
                if not line:
                    continue
                msg = json.loads(line)
                arch_id = msg.get("arch_id")
                with self._pending_lock:
                    if arch_id in self._events:
                        self._pending[arch_id] = msg
                        self._events[arch_id].set()
                    else:
                        self._fail_all_locked(CorrelationError(
                            f"response for unknown arch_id {arch_id!r}"))
                        return
            self._fail_all(EvaluationError("trainer connection closed"))
        except Exception as exc:  # noqa: BLE001 - reader must never die silently
            self._fail_all(EvaluationError(f"trainer connection failed: {exc}"))

    def _fail_all(self, exc: Exception) -> None:
        with self._pending_lock:
            self._fail_all_locked(exc)

    def _fail_all_locked(self, exc: Exception) -> None:
        self._dead = exc
        for event in self._events.values():
            event.set()

    def request(self, message: dict, arch_id: str, timeout: float) -> dict:
        event = threading.Event()
        with self._pending_lock:
            if self._dead is not None:
                raise self._dead
            if arch_id in self._events:
                raise EvaluationError(f"request for {arch_id} already in flight")
            self._events[arch_id] = event
        try:
            self._send(message)
            if not event.wait(timeout):
                raise EvalTimeoutError(
                    f"no response for {arch_id} within {timeout} seconds")
            with self._pending_lock:
                if self._dead is not None and arch_id not in self._pending:
                    raise self._dead
                return self._pending.pop(arch_id)
        finally:
            with self._pending_lock:
                self._events.pop(arch_id, None)
                self._pending.pop(arch_id, None)

    def close(self) -> None:
        try:
            self._close_fn()
        except Exception:
            pass


class ExternalEvaluator:
    """Protocol client for an external trainer process or endpoint."""

    def __init__(self, space: SearchSpaceConfig, command: Sequence[str] | str | None = None,
                 address: str | None = None, cache: PredictionCache | None = None,
                 timeout: float = 3600.0, retries: int = 2):
        if (command is None) == (address is None):
            raise EvaluationError("exactly one of command/address must be given")
        self.space = space
        self.space_hash = space_config_hash(space)
        self.command = shlex.split(command) if isinstance(command, str) else (
            list(command) if command is not None else None)
        self.address = address
        self.cache = cache
        self.timeout = float(timeout)
        self.retries = int(retries)
        self._conn: _Connection | None = None
        self._proc: subprocess.Popen | None = None
        self._conn_lock = threading.Lock()

    def set_cache(self, cache: PredictionCache) -> None:
        self.cache = cache

    # -- connection management

    def _resolved_command(self) -> list[str]:
        cache_dir = str(self.cache.directory) if self.cache is not None else ""
        return [arg.replace("{cache_dir}", cache_dir) for arg in self.command]

    def _open(self) -> _Connection:
        if self.command is not None:
            proc = subprocess.Popen(
                self._resolved_command(), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, bufsize=1,
            )
            self._proc = proc

            def close():
                proc.terminate()
                try:
                    proc.wait(timeout=5)
                except subprocess.TimeoutExpired:
                    proc.kill()

            return _Connection(proc.stdout, proc.stdin, close, self.space_hash)
        host, _, port = self.address.rpartition(":")
        sock = socket.create_connection((host, int(port)), timeout=self.timeout)
        reader = sock.makefile("r", encoding="utf-8")
        writer = sock.makefile("w", encoding="utf-8")
        return _Connection(reader, writer, sock.close, self.space_hash)

    def _connection(self) -> _Connection:
        with self._conn_lock:
            if self._conn is None:
                self._conn = self._open()
            return self._conn

    def _drop_connection(self) -> None:
        with self._conn_lock:
            if self._conn is not None:
                self._conn.close()
                self._conn = None

    def close(self) -> None:
        self._drop_connection()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- evaluation

    def _train_message(self, req: EvalRequest) -> dict:
        from .distill import data_filename

        return {
            "type": "train",
            "arch_id": req.arch_id,
            "spec": req.spec.to_dict(),
            "seed": req.seed,
            "epochs": req.epochs,
            "kd": {
                "weight": req.kd_weight,
                "teacher_files": [data_filename(t) for t in req.teacher_ids],
            },
        }

    def evaluate(self, req: EvalRequest) -> EvalResult:
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                return self._evaluate_once(req)
            except (HandshakeError, EvalTimeoutError, TrainerError, CorrelationError):
                raise  # not transport failures; retrying would retrain blindly
            except EvaluationError as exc:
                last = exc
                self._drop_connection()
        raise EvaluationError(
            f"transport failed after {self.retries + 1} attempts: {last}") from last

    def _evaluate_once(self, req: EvalRequest) -> EvalResult:
        conn = self._connection()
        try:
            msg = conn.request(self._train_message(req), req.arch_id, self.timeout)
        except EvalTimeoutError:
            self._drop_connection()
            raise
        if msg.get("type") == "error":
            raise TrainerError(code=str(msg.get("code")), message=str(msg.get("message")),
                               arch_id=msg.get("arch_id"))
        if msg.get("type") != "result":
            raise CorrelationError(f"unexpected message type {msg.get('type')!r}")
        if msg.get("arch_id") != req.arch_id:
            raise CorrelationError(
                f"result arch_id {msg.get('arch_id')!r} does not match request {req.arch_id!r}")
        preds_ref = None
        preds_file = msg.get("preds_file")
        if preds_file:
            from .distill import data_filename

            if preds_file != data_filename(req.arch_id):
                raise CorrelationError(
                    f"preds_file {preds_file!r} does not belong to {req.arch_id}")
            if self.cache is not None and not self.cache.has(req.arch_id):
                raise EvaluationError(
                    f"trainer announced {preds_file} but the cache entry is missing")
            preds_ref = req.arch_id
        return EvalResult(
            arch_id=req.arch_id,
            score=float(msg["score"]),
            metric_name=str(msg.get("metric", "unknown")),
            per_epoch=tuple(float(x) for x in msg.get("per_epoch", ())),
            preds_ref=preds_ref,
        )
