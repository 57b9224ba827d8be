"""Search orchestration: the surrogate-guided loop, the random-search
baseline, resumable on-disk state, and figure-style reporting.

One run owns one state directory (guarded by a LOCK file):

    config.json    search/space/predictor configs + procedure metadata
    records.jsonl  one evaluated architecture per line, append-only
    rng.json       bit-generator state, iteration counter, completion flag
    predictions/   the distillation cache (see distill module)

State is committed after every completed evaluation batch: records are
appended first, then rng.json is atomically replaced. Resuming restores the
generator state from the last commit and replays the remaining iterations,
which reproduces an uninterrupted run exactly (parallelism 1).
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .avec import encode, feature_layout
from .distill import PredictionCache, select_teachers
from .evaluators import EvalRequest, EvalResult, EvaluationError
from .selector import SelectionRequest, thompson_select
from .space import (
    ArchitectureSpec,
    SearchSpaceConfig,
    canonical_id,
    sample_architecture,
)
from .surrogate import PredictorConfig, fit, predict

_SAMPLING_ATTEMPT_FACTOR = 10_000


class EngineError(RuntimeError):
    pass


class StateIntegrityError(EngineError):
    pass


class StateLockedError(EngineError):
    pass


class SamplingExhaustedError(EngineError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    n_init: int = 100
    n_iter: int = 100
    m_iterations: int = 40
    l_candidates: int = 15
    kd_start_after: int = 30
    kd_top_k: int = 3
    kd_weight: float = 1.0
    seed: int = 0
    parallelism: int = 1
    sampling_mode: str = "per-factor"
    epochs: int = 1
    eval_retries: int = 2

    def validate(self) -> None:
        problems = []
        for name in ("n_init", "n_iter", "m_iterations", "l_candidates",
                     "kd_top_k", "parallelism", "epochs"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be positive")
        if self.kd_start_after < 0:
            problems.append("kd_start_after must be non-negative")
        if self.kd_weight < 0:
            problems.append("kd_weight must be non-negative")
        if self.l_candidates > self.n_iter:
            problems.append("l_candidates must not exceed n_iter")
        if self.n_init < 5:
            problems.append("n_init must be at least 5 (predictor minimum)")
        if problems:
            raise EngineError("; ".join(problems))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        return cls(**d)


@dataclass(frozen=True)
class TrainedRecord:
    arch_id: str
    spec: ArchitectureSpec
    avec: tuple[int, ...]
    score: float
    metric_name: str
    preds_ref: str | None = None
    epoch_count: int = 0
    wall_seconds: float = 0.0
    teacher_ids: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "arch_id": self.arch_id,
            "spec": self.spec.to_dict(),
            "avec": "".join(str(b) for b in self.avec),
            "score": self.score,
            "metric_name": self.metric_name,
            "preds_ref": self.preds_ref,
            "epoch_count": self.epoch_count,
            "wall_seconds": self.wall_seconds,
            "teacher_ids": list(self.teacher_ids),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedRecord":
        return cls(
            arch_id=d["arch_id"],
            spec=ArchitectureSpec.from_dict(d["spec"]),
            avec=tuple(int(c) for c in d["avec"]),
            score=float(d["score"]),
            metric_name=d["metric_name"],
            preds_ref=d.get("preds_ref"),
            epoch_count=int(d.get("epoch_count", 0)),
            wall_seconds=float(d.get("wall_seconds", 0.0)),
            teacher_ids=tuple(d.get("teacher_ids", ())),
        )


@dataclass
class SearchState:
    search: SearchConfig
    space: SearchSpaceConfig
    predictor: PredictorConfig
    procedure: str  # "search" | "random"
    iteration: int = 0
    records: list[TrainedRecord] = field(default_factory=list)
    completed: bool = False
    budget: int | None = None       # random search only
    kd_enabled: bool = True
    rng_state: dict | None = None   # bit-generator state at the last commit

    @property
    def trained_ids(self) -> set[str]:
        return {r.arch_id for r in self.records}

    def best_record(self) -> TrainedRecord:
        if not self.records:
            raise EngineError("no records in state")
        return min(self.records, key=lambda r: (-r.score, r.arch_id))


def report_top3_curve(state: SearchState | Sequence[TrainedRecord],
                      k: int = 3) -> list[tuple[int, float]]:
    """value(t) = mean of the min(k, t) largest scores among records 1..t,
    with records in training-completion order."""
    records = state.records if isinstance(state, SearchState) else list(state)
    if not records:
        raise EngineError("cannot report on an empty state")
    if k < 1:
        raise EngineError("k must be positive")
    curve = []
    top: list[float] = []
    for t, rec in enumerate(records, start=1):
        top.append(rec.score)
        top.sort(reverse=True)
        top = top[:k]
        curve.append((t, sum(top) / len(top)))
    return curve


# ---------------------------------------------------------------- state store


class StateStore:
    """Owns the on-disk layout; None-directory stores keep everything in memory."""

    def __init__(self, directory: str | Path | None):
        self.directory = Path(directory) if directory is not None else None
        self._locked = False
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)

    # -- paths

    def _path(self, name: str) -> Path:
        return self.directory / name

    @property
    def cache_dir(self) -> Path | None:
        return self._path("predictions") if self.directory is not None else None

    def cache(self) -> PredictionCache | None:
        return PredictionCache(self.cache_dir) if self.directory is not None else None

    # -- locking

    def acquire_lock(self) -> None:
        if self.directory is None:
            return
        lock = self._path("LOCK")
        while True:
            try:
                fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                os.write(fd, str(os.getpid()).encode())
                os.close(fd)
                self._locked = True
                return
            except FileExistsError:
                try:
                    pid = int(lock.read_text() or "0")
                except (ValueError, FileNotFoundError):
                    pid = 0
                if pid and pid != os.getpid() and _pid_alive(pid):
                    raise StateLockedError(
                        f"state directory {self.directory} is locked by running pid {pid}")
                try:  # stale lock: previous owner is gone
                    lock.unlink()
                except FileNotFoundError:
                    pass

    def release_lock(self) -> None:
        if self.directory is None or not self._locked:
            return
        try:
            self._path("LOCK").unlink()
        except FileNotFoundError:
            pass
        self._locked = False

    # -- persistence

    def write_config(self, state: SearchState) -> None:
        if self.directory is None:
            return
        payload = {
            "procedure": state.procedure,
            "search": state.search.to_dict(),
            "space": state.space.to_dict(),
            "predictor": state.predictor.to_dict(),
            "budget": state.budget,
            "kd_enabled": state.kd_enabled,
        }
        _atomic_write(self._path("config.json"),
                      json.dumps(payload, indent=2, sort_keys=True).encode("utf-8"))

    def append_records(self, records: Sequence[TrainedRecord]) -> None:
        if self.directory is None:
            return
        text = "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in records)
        with open(self._path("records.jsonl"), "a", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())

    def commit_progress(self, state: SearchState, rng: np.random.Generator) -> None:
        state.rng_state = rng.bit_generator.state
        if self.directory is None:
            return
        payload = {
            "bit_generator": state.rng_state,
            "iteration": state.iteration,
            "n_records": len(state.records),
            "completed": state.completed,
        }
        _atomic_write(self._path("rng.json"),
                      json.dumps(payload, sort_keys=True).encode("utf-8"))

    # -- loading

    def load(self) -> tuple[SearchState, dict]:
        if self.directory is None:
            raise StateIntegrityError("no state directory configured")
        problems = []
        cfg_path, rng_path, rec_path = (self._path(n) for n in
                                        ("config.json", "rng.json", "records.jsonl"))
        for p in (cfg_path, rng_path):
            if not p.exists():
                problems.append(f"missing {p.name}")
        if problems:
            raise StateIntegrityError("; ".join(problems))
        with open(cfg_path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
        with open(rng_path, "r", encoding="utf-8") as fh:
            progress = json.load(fh)

        committed = int(progress["n_records"])
        records = []
        lines: list[str] = []
        if rec_path.exists():
            lines = rec_path.read_text(encoding="utf-8").splitlines()
        if len(lines) < committed:
            raise StateIntegrityError(
                f"records.jsonl holds {len(lines)} records but rng.json committed {committed}")
        for i, line in enumerate(lines[:committed], start=1):
            try:
                records.append(TrainedRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise StateIntegrityError(f"records.jsonl line {i} is corrupt: {exc}") from exc
        if len(lines) > committed:
            # an interrupted, uncommitted batch: discard and re-evaluate
            _atomic_write(rec_path, ("".join(l + "\n" for l in lines[:committed])).encode("utf-8"))

        state = SearchState(
            search=SearchConfig.from_dict(cfg["search"]),
            space=SearchSpaceConfig.from_dict(cfg["space"]),
            predictor=PredictorConfig.from_dict(cfg["predictor"]),
            procedure=cfg["procedure"],
            iteration=int(progress["iteration"]),
            records=records,
            completed=bool(progress["completed"]),
            budget=cfg.get("budget"),
            kd_enabled=bool(cfg.get("kd_enabled", True)),
            rng_state=progress["bit_generator"],
        )
        return state, progress


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


# ---------------------------------------------------------------- internals


def _sample_fresh(space: SearchSpaceConfig, rng: np.random.Generator, mode: str,
                  count: int, taken: set[str]) -> list[tuple[str, ArchitectureSpec]]:
    """count distinct architectures whose ids avoid `taken` (and each other)."""
    out: list[tuple[str, ArchitectureSpec]] = []
    fresh: set[str] = set()
    attempts = 0
    limit = _SAMPLING_ATTEMPT_FACTOR * count
    while len(out) < count:
        if attempts >= limit:
            raise SamplingExhaustedError(
                f"could not find {count} fresh architectures in {limit} attempts; "
                f"the space may be nearly exhausted ({len(taken)} already trained)")
        attempts += 1
        spec = sample_architecture(space, rng, mode)
        arch_id = canonical_id(spec)
        if arch_id in taken or arch_id in fresh:
            continue
        fresh.add(arch_id)
        out.append((arch_id, spec))
    return out


def _evaluate_batch(evaluator, requests: Sequence[EvalRequest], parallelism: int,
                    retries: int) -> list[tuple[EvalResult, float]]:
    """Evaluate all requests; results return in request order regardless of
    completion order. Each request is retried on failure up to `retries`
    extra times; a persistent failure aborts the whole batch."""

    def run_one(req: EvalRequest) -> tuple[EvalResult, float]:
        last: Exception | None = None
        for _ in range(retries + 1):
            start = time.monotonic()
            try:
                result = evaluator.evaluate(req)
                if result.arch_id != req.arch_id:
                    raise EvaluationError(
                        f"evaluator returned arch_id {result.arch_id} for {req.arch_id}")
                return result, time.monotonic() - start
            except Exception as exc:  # noqa: BLE001 - retry then surface
                last = exc
        raise EvaluationError(
            f"evaluation of {req.arch_id} failed after {retries + 1} attempts: {last}"
        ) from last

    if parallelism <= 1 or len(requests) <= 1:
        return [run_one(r) for r in requests]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(run_one, requests))


def _teacher_ids_for_batch(state: SearchState, cache: PredictionCache | None) -> tuple[str, ...]:
    if not state.kd_enabled or cache is None:
        return ()
    if len(state.records) < state.search.kd_start_after:
        return ()
    cached = [r for r in state.records if r.preds_ref is not None and cache.has(r.preds_ref)]
    if not cached:
        return ()
    return select_teachers(cached, state.search.kd_top_k, cache).teacher_ids


def _records_from_results(pairs, requests, avecs) -> list[TrainedRecord]:
    records = []
    for (result, wall), req, bits in zip(pairs, requests, avecs):
        records.append(TrainedRecord(
            arch_id=result.arch_id,
            spec=req.spec,
            avec=bits,
            score=result.score,
            metric_name=result.metric_name,
            preds_ref=result.preds_ref,
            epoch_count=len(result.per_epoch) if result.per_epoch else req.epochs,
            wall_seconds=wall,
            teacher_ids=req.teacher_ids,
        ))
    return records


def _build_requests(batch, state: SearchState, rng: np.random.Generator,
                    layout, teacher_ids: tuple[str, ...]):
    """Requests plus the matching feature vectors, in candidate order.
    Per-request seeds are drawn here so the rng stream is identical on replay."""
    requests, avecs = [], []
    for arch_id, spec in batch:
        requests.append(EvalRequest(
            arch_id=arch_id,
            spec=spec,
            seed=int(rng.integers(0, 2**63 - 1)),
            teacher_ids=teacher_ids,
            kd_weight=state.search.kd_weight,
            epochs=state.search.epochs,
        ))
        avecs.append(encode(spec, state.space, layout).bits)
    return requests, avecs


def _run_init_batch(state: SearchState, store: StateStore, evaluator,
                    rng: np.random.Generator) -> None:
    cfg = state.search
    layout = feature_layout(state.space)
    init = _sample_fresh(state.space, rng, cfg.sampling_mode, cfg.n_init, set())
    requests, avecs = _build_requests(init, state, rng, layout, ())
    results = _evaluate_batch(evaluator, requests, cfg.parallelism, cfg.eval_retries)
    state.records.extend(_records_from_results(results, requests, avecs))
    store.append_records(state.records)
    store.commit_progress(state, rng)


def _run_iterations(state: SearchState, store: StateStore, evaluator,
                    rng: np.random.Generator) -> None:
    """Iterations state.iteration+1 .. M of the surrogate-guided loop."""
    cfg = state.search
    layout = feature_layout(state.space)
    cache = store.cache()
    if cache is not None and hasattr(evaluator, "set_cache"):
        evaluator.set_cache(cache)

    while state.iteration < cfg.m_iterations:
        model = fit(
            np.asarray([r.avec for r in state.records], dtype=np.float64),
            np.asarray([r.score for r in state.records], dtype=np.float64),
            state.predictor,
            np.random.default_rng(int(rng.integers(0, 2**63 - 1))),
            layout_fp=layout.fingerprint,
        )
        candidates = _sample_fresh(state.space, rng, cfg.sampling_mode,
                                   cfg.n_iter, state.trained_ids)
        predictions = predict(model, np.asarray(
            [encode(spec, state.space, layout).as_array() for _, spec in candidates]))
        chosen = thompson_select(
            SelectionRequest(predictions=predictions, count=cfg.l_candidates), rng)
        batch = [candidates[i] for i in chosen]
        teacher_ids = _teacher_ids_for_batch(state, cache)
        requests, avecs = _build_requests(batch, state, rng, layout, teacher_ids)
        results = _evaluate_batch(evaluator, requests, cfg.parallelism, cfg.eval_retries)
        state.records.extend(_records_from_results(results, requests, avecs))
        state.iteration += 1
        state.completed = state.iteration >= cfg.m_iterations
        store.append_records(state.records[-len(requests):])
        store.commit_progress(state, rng)


def _run_random(state: SearchState, store: StateStore, evaluator,
                rng: np.random.Generator) -> None:
    cfg = state.search
    layout = feature_layout(state.space)
    cache = store.cache()
    if cache is not None and hasattr(evaluator, "set_cache"):
        evaluator.set_cache(cache)

    while len(state.records) < state.budget:
        [(arch_id, spec)] = _sample_fresh(state.space, rng, cfg.sampling_mode,
                                          1, state.trained_ids)
        teacher_ids = _teacher_ids_for_batch(state, cache) if state.kd_enabled else ()
        requests, avecs = _build_requests([(arch_id, spec)], state, rng, layout, teacher_ids)
        results = _evaluate_batch(evaluator, requests, 1, cfg.eval_retries)
        state.records.extend(_records_from_results(results, requests, avecs))
        state.iteration = len(state.records)
        state.completed = len(state.records) >= state.budget
        store.append_records(state.records[-1:])
        store.commit_progress(state, rng)


# ---------------------------------------------------------------- public API


def run_search(search: SearchConfig, space: SearchSpaceConfig,
               predictor: PredictorConfig, evaluator,
               state_dir: str | Path | None = None) -> SearchState:
    """Full surrogate-guided run: n_init random evaluations, then M rounds of
    (refit predictor -> sample fresh candidates -> Thompson-select ->
    evaluate with teacher references when distillation is active)."""
    search.validate()
    space.validate()
    predictor.validate()
    state = SearchState(search=search, space=space, predictor=predictor,
                        procedure="search")
    store = StateStore(state_dir)
    store.acquire_lock()
    try:
        store.write_config(state)
        rng = np.random.default_rng(search.seed)
        cache = store.cache()
        if cache is not None and hasattr(evaluator, "set_cache"):
            evaluator.set_cache(cache)
        store.commit_progress(state, rng)  # makes an init-interrupted run resumable

        _run_init_batch(state, store, evaluator, rng)
        _run_iterations(state, store, evaluator, rng)
        return state
    finally:
        store.release_lock()


def run_random_search(budget: int, kd_enabled: bool, search: SearchConfig,
                      space: SearchSpaceConfig, evaluator,
                      state_dir: str | Path | None = None,
                      predictor: PredictorConfig | None = None) -> SearchState:
    """Uniformly sample `budget` distinct architectures and evaluate each;
    teacher ensembles apply past kd_start_after exactly as in run_search."""
    if budget < 1:
        raise EngineError("budget must be positive")
    search.validate()
    space.validate()
    state = SearchState(
        search=search, space=space,
        predictor=predictor if predictor is not None else PredictorConfig(),
        procedure="random", budget=budget, kd_enabled=kd_enabled,
    )
    store = StateStore(state_dir)
    store.acquire_lock()
    try:
        store.write_config(state)
        rng = np.random.default_rng(search.seed)
        store.commit_progress(state, rng)
        _run_random(state, store, evaluator, rng)
        return state
    finally:
        store.release_lock()


def load_state(state_dir: str | Path) -> SearchState:
    """Read a persisted state without taking ownership (for reporting)."""
    state, _ = StateStore(state_dir).load()
    return state


def resume(state_dir: str | Path, evaluator) -> SearchState:
    """Continue an interrupted run from its last committed batch. With
    parallelism 1 the final record set equals an uninterrupted run."""
    store = StateStore(state_dir)
    state, progress = store.load()
    if state.completed:
        return state
    store.acquire_lock()
    try:
        rng = np.random.default_rng(0)
        rng.bit_generator.state = progress["bit_generator"]
        if state.procedure == "random":
            _run_random(state, store, evaluator, rng)
        else:
            if not state.records:
                _run_init_batch(state, store, evaluator, rng)
            _run_iterations(state, store, evaluator, rng)
        return state
    finally:
        store.release_lock()
