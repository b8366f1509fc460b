"""Asynchronous multi-worker trial scheduler with a locked, journaled history."""
from __future__ import annotations

import json
import logging
import math
import queue
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from ..errors import ConfigError
from .acquisition import GpEiSuggester, Observation
from .space import SearchSpace

log = logging.getLogger(__name__)

STATUSES = ("pending", "running", "done", "failed")


@dataclass
class TrialRecord:
    trial_id: int
    params: dict
    status: str = "pending"
    loss: float | None = None
    worker: int | None = None
    seconds: float | None = None
    error: str | None = None

    def to_event(self) -> dict:
        event = {"trial_id": self.trial_id, "status": self.status, "H": self.params, "worker": self.worker,
                 "timestamp": time.time()}
        if self.status == "done":
            event["L_valid"] = self.loss
            event["seconds"] = self.seconds
        if self.error is not None:
            event["error"] = self.error
        return event


class WorkerQueue:
    """A fixed set of execution slots; ``get`` blocks until one is free."""

    def __init__(self, n_slots: int):
        if n_slots < 1:
            raise ConfigError(f"need at least one worker slot, got {n_slots}")
        self.n_slots = n_slots
        self._q: queue.Queue[int] = queue.Queue()
        for slot in range(n_slots):
            self._q.put(slot)
        self._held: set[int] = set()
        self._lock = threading.Lock()
        self.max_held = 0

    def get(self) -> int:
        slot = self._q.get()
        with self._lock:
            if slot in self._held:
                raise RuntimeError(f"slot {slot} handed out twice")
            self._held.add(slot)
            self.max_held = max(self.max_held, len(self._held))
        return slot

    def put(self, slot: int) -> None:
        with self._lock:
            if slot not in self._held:
                raise RuntimeError(f"slot {slot} returned without being taken")
            self._held.discard(slot)
        self._q.put(slot)

    @property
    def held(self) -> int:
        with self._lock:
            return len(self._held)

    def available(self) -> int:
        return self._q.qsize()


class Suggester(Protocol):
    def suggest(self, completed: Sequence[Observation], pending: Sequence[np.ndarray]) -> dict: ...


class Journal:
    """Append-only JSON-lines log of trial state transitions."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def write(self, record: TrialRecord) -> None:
        line = json.dumps(record.to_event(), sort_keys=True)
        with self._lock, open(self.path, "a") as fh:
            fh.write(line + "\n")

    @staticmethod
    def read(path) -> list[dict]:
        path = Path(path)
        if not path.exists():
            return []
        events = []
        for n, line in enumerate(path.read_text().splitlines(), 1):
            if line.strip():
                try:
                    events.append(json.loads(line))
                except json.JSONDecodeError:
                    raise ConfigError(f"{path}:{n}: corrupt journal line") from None
        return events


def replay(events: Sequence[dict]) -> dict[int, TrialRecord]:
    """Final state of every trial in a journal, keyed by trial id."""
    trials: dict[int, TrialRecord] = {}
    for e in events:
        rec = trials.setdefault(e["trial_id"], TrialRecord(e["trial_id"], e["H"]))
        rec.status = e["status"]
        rec.worker = e.get("worker")
        rec.loss = e.get("L_valid")
        rec.seconds = e.get("seconds")
        rec.error = e.get("error")
    return trials


def best_so_far(records: Sequence[TrialRecord]) -> list[float]:
    """Running minimum of the loss over finished trials, in completion order."""
    curve, best = [], math.inf
    for r in records:
        if r.status == "done":
            best = min(best, r.loss)
        curve.append(best)
    return curve


class History:
    """Trial history; all mutation happens under ``lock``."""

    def __init__(self, space: SearchSpace):
        self.space = space
        self.lock = threading.Lock()
        self.finished: list[TrialRecord] = []  # completion order
        self.active: dict[int, TrialRecord] = {}

    def completed(self) -> list[Observation]:
        return [Observation(self.space.to_unit(r.params), r.loss) for r in self.finished if r.status == "done"]

    def pending_points(self) -> list[np.ndarray]:
        return [self.space.to_unit(r.params) for r in self.active.values()]

    def best(self) -> TrialRecord | None:
        done = [r for r in self.finished if r.status == "done"]
        return min(done, key=lambda r: (r.loss, r.trial_id)) if done else None


@dataclass
class SearchResult:
    best: TrialRecord | None
    trials: list[TrialRecord] = field(default_factory=list)
    wall_seconds: float = 0.0
    max_concurrent: int = 0
    free_slots: int = 0

    @property
    def curve(self) -> list[float]:
        return best_so_far(self.trials)


def run(objective: Callable[[dict], float], space: SearchSpace, n_trials: int = 32, n_workers: int = 8,
        seed: int = 0, suggester: Suggester | None = None, journal=None, resume: bool = False) -> SearchResult:
    """Search ``space`` for the hyperparameters minimizing ``objective``.

    Each trial takes a worker slot, gets its suggestion under the history
    lock, and is evaluated on a thread without holding the lock.  The result
    is recorded under the lock before the slot is returned.  A failing or
    non-finite objective marks the trial failed; the search carries on.

    With ``resume`` the journal's finished trials are loaded first and count
    toward ``n_trials``; trials it left unfinished are closed as failed.
    """
    if n_trials < 1:
        raise ConfigError(f"n_trials must be >= 1, got {n_trials}")
    suggester = suggester if suggester is not None else GpEiSuggester(space, seed=seed)
    slots = WorkerQueue(n_workers)
    history = History(space)
    jnl = Journal(journal) if journal is not None else None
    next_id = 0
    if jnl is not None and resume:
        previous = replay(Journal.read(jnl.path))
        for rec in sorted(previous.values(), key=lambda r: r.trial_id):
            if rec.status not in ("done", "failed"):
                rec.status, rec.error, rec.loss = "failed", "interrupted", None
                jnl.write(rec)
            history.finished.append(rec)
        next_id = max(previous, default=-1) + 1
        # keep the suggestion stream where the interrupted run left it
        if hasattr(suggester, "issued"):
            suggester.issued = next_id
        log.info("resumed %d trials from %s", len(previous), jnl.path)
    elif jnl is not None and jnl.path.exists():
        jnl.path.unlink()

    def evaluate(rec: TrialRecord, slot: int) -> None:
        started = time.perf_counter()
        try:
            with history.lock:
                rec.status = "running"
                if jnl is not None:
                    jnl.write(rec)
            loss = float(objective(dict(rec.params)))
            if not math.isfinite(loss):
                raise ValueError(f"objective returned {loss}")
            status, err = "done", None
        except Exception as e:  # any objective failure fails only this trial
            log.warning("trial %d failed: %s", rec.trial_id, e)
            loss, status, err = None, "failed", f"{type(e).__name__}: {e}"
        finally:
            with history.lock:
                rec.status, rec.loss, rec.error = status, loss, err
                rec.seconds = time.perf_counter() - started
                history.active.pop(rec.trial_id, None)
                history.finished.append(rec)
                if jnl is not None:
                    jnl.write(rec)
            slots.put(slot)

    started = time.perf_counter()
    remaining = n_trials - len(history.finished)
    with ThreadPoolExecutor(max_workers=n_workers, thread_name_prefix="trial") as pool:
        for _ in range(max(remaining, 0)):
            slot = slots.get()
            with history.lock:
                params = suggester.suggest(history.completed(), history.pending_points())
                rec = TrialRecord(next_id, params, "pending", worker=slot)
                next_id += 1
                history.active[rec.trial_id] = rec
                if jnl is not None:
                    jnl.write(rec)
            pool.submit(evaluate, rec, slot)
    wall = time.perf_counter() - started
    return SearchResult(history.best(), list(history.finished), wall, slots.max_held, slots.available())


def result_to_dict(result: SearchResult) -> dict:
    return {"best": asdict(result.best) if result.best else None, "wall_seconds": result.wall_seconds,
            "n_trials": len(result.trials), "curve": result.curve}
