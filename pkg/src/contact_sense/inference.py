"""Majority-vote streaming classification and the latency estimate."""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .models import ModelState, predict_proba
from .preprocessing import PreprocessingParams, feature_stream, first_inference_offset_ticks
from .types import NUM_CLASSES, NUM_FEATURES, PERIOD_MS, WINDOW_LEN, ClassLabel, Recording, contact_onsets


class VoteMethod(str, enum.Enum):
    HARD = "hard"
    SOFT = "soft"


class InsufficientPredictions(ValueError):
    pass


class PartialDecisionError(RuntimeError):
    def __init__(self, recording_id: str, contact_index: int, have: int, need: int):
        super().__init__(
            f"recording {recording_id!r} contact {contact_index}: only {have} of {need} predictions "
            f"before the recording ended"
        )
        self.contact_index = contact_index


@dataclass(frozen=True)
class VotingConfig:
    method: VoteMethod = VoteMethod.HARD
    n_p: int = 8
    infer_every: int = 3
    model_runtime_ms: float = 7.09
    n_p_min: int = 8
    n_p_max: int = 15
    hard_tie: str = "recent"  # "recent" or "lowest"
    continuous: bool = False

    def __post_init__(self):
        object.__setattr__(self, "method", VoteMethod(self.method))
        if self.n_p < 1 or self.infer_every < 1:
            raise ValueError("n_p and infer_every must be >= 1")
        if self.hard_tie not in ("recent", "lowest"):
            raise ValueError(f"unknown hard-vote tie rule {self.hard_tie!r}")

    def label(self) -> str:
        return f"{self.method.value}_np{self.n_p}"


class VoteBuffer:
    """The last ``n_p`` probability vectors, oldest evicted first."""

    def __init__(self, n_p: int):
        if n_p < 1:
            raise ValueError("n_p must be >= 1")
        self.n_p = n_p
        self._entries: deque = deque(maxlen=n_p)

    def push(self, probs) -> None:
        p = np.asarray(probs, dtype=np.float64)
        if p.shape != (NUM_CLASSES,):
            raise ValueError(f"expected a {NUM_CLASSES}-vector, got shape {p.shape}")
        self._entries.append(p)

    @property
    def entries(self) -> list[np.ndarray]:
        return list(self._entries)

    @property
    def full(self) -> bool:
        return len(self._entries) == self.n_p

    def __len__(self) -> int:
        return len(self._entries)

    def clear(self) -> None:
        self._entries.clear()

    @classmethod
    def of(cls, probs) -> "VoteBuffer":
        probs = list(probs)
        buf = cls(len(probs))
        for p in probs:
            buf.push(p)
        return buf


def vote(buffer: VoteBuffer, method=VoteMethod.HARD, hard_tie: str = "recent") -> ClassLabel:
    """Hard: mode of per-entry argmax. Soft: argmax of the mean probability (lowest index on ties)."""
    if not buffer.full:
        raise InsufficientPredictions(f"insufficient predictions: {len(buffer)} of {buffer.n_p}")
    probs = np.stack(buffer.entries)
    method = VoteMethod(method)
    if method is VoteMethod.SOFT:
        return ClassLabel.from_index(int(np.argmax(probs.mean(axis=0))))
    votes = probs.argmax(axis=1)
    counts = np.bincount(votes, minlength=NUM_CLASSES)
    tied = set(np.flatnonzero(counts == counts.max()).tolist())
    if len(tied) == 1 or hard_tie == "lowest":
        return ClassLabel.from_index(min(tied))
    for v in votes[::-1]:
        if int(v) in tied:
            return ClassLabel.from_index(int(v))
    raise AssertionError("unreachable")


def latency(n_p: int, infer_every: int, period_ms: float, model_runtime_ms: float) -> float:
    return n_p * infer_every * period_ms + model_runtime_ms


def latency_bounds(config: VotingConfig, period_ms: float = PERIOD_MS) -> tuple[float, float]:
    if period_ms <= 0:
        raise ValueError("period must be positive")
    return (latency(config.n_p_min, config.infer_every, period_ms, config.model_runtime_ms),
            latency(config.n_p_max, config.infer_every, period_ms, config.model_runtime_ms))


@dataclass(frozen=True)
class Decision:
    tick: int
    t_ms: int
    contact_index: int
    label: ClassLabel
    mean_probs: tuple[float, ...]
    latency_ms: float

    def record(self) -> str:
        probs = " ".join(f"p_{ClassLabel.from_index(i).value}={p:.6f}" for i, p in enumerate(self.mean_probs))
        return (f"tick={self.tick} t_ms={self.t_ms} contact={self.contact_index} "
                f"label={self.label.value} {probs} latency_ms={self.latency_ms:.2f}")


class _Pending:
    __slots__ = ("contact_index", "trigger", "buffer", "next_tick", "decided")

    def __init__(self, contact_index: int, trigger: int, first: int, n_p: int):
        self.contact_index = contact_index
        self.trigger = trigger
        self.buffer = VoteBuffer(n_p)
        self.next_tick = first
        self.decided = False


class StreamSession:
    """Tick-by-tick classifier: feed samples in order, collect decisions.

    After a contact trigger (rising edge of the contact flag) plus the offset,
    the model runs on the trailing 40-sample window every ``infer_every`` ticks.
    A decision is emitted ``infer_every`` ticks after the n_p-th inference,
    i.e. at ``trigger + ceil(offset / 5) + n_p * infer_every``.
    """

    def __init__(self, model: ModelState, params: PreprocessingParams, config: VotingConfig,
                 max_contacts: int = 3, recording_id: str = ""):
        self.model = model
        self.params = params
        self.config = config
        self.max_contacts = max_contacts
        self.recording_id = recording_id
        self.tick = -1
        self._rows: deque = deque(maxlen=WINDOW_LEN)
        self._prev_flag = None
        self._contacts = 0
        self._pending: list[_Pending] = []
        self._latency = latency(config.n_p, config.infer_every, PERIOD_MS, config.model_runtime_ms)
        self.t0: int | None = None

    def push(self, features: np.ndarray, contact: bool, t_ms: int | None = None) -> list[Decision]:
        self.tick += 1
        if self.t0 is None:
            self.t0 = int(t_ms) if t_ms is not None else 0
        row = np.asarray(features, dtype=np.float64)
        if row.shape != (NUM_FEATURES,):
            raise ValueError(f"feature row must have {NUM_FEATURES} entries, got {row.shape}")
        self._rows.append(row)
        out: list[Decision] = []
        cfg = self.config

        for p in self._pending:
            if not p.decided and p.buffer.full and self.tick == p.next_tick:
                out.append(self._decide(p))
                if not cfg.continuous:
                    p.decided = True

        rising = self._prev_flag is not None and contact and not self._prev_flag
        self._prev_flag = bool(contact)
        if rising and self._contacts < self.max_contacts:
            first = self.tick + first_inference_offset_ticks(self.params)
            if cfg.continuous:
                for p in self._pending:
                    p.decided = True
            self._pending.append(_Pending(self._contacts, self.tick, first, cfg.n_p))
            self._contacts += 1

        for p in self._pending:
            if p.decided or self.tick != p.next_tick:
                continue
            if cfg.continuous or not p.buffer.full:
                if len(self._rows) == WINDOW_LEN:
                    p.buffer.push(predict_proba(self.model, np.stack(self._rows))[0])
                p.next_tick += cfg.infer_every
        self._pending = [p for p in self._pending if not p.decided]
        return out

    def _decide(self, p: _Pending) -> Decision:
        probs = np.stack(p.buffer.entries)
        label = vote(p.buffer, self.config.method, self.config.hard_tie)
        t_ms = self.t0 + self.tick * PERIOD_MS
        return Decision(self.tick, t_ms, p.contact_index, label, tuple(probs.mean(axis=0).tolist()), self._latency)

    def close(self) -> None:
        """Raise for a contact still waiting on predictions when the stream ends."""
        for p in self._pending:
            if not p.decided and not (self.config.continuous and p.buffer.full):
                raise PartialDecisionError(self.recording_id, p.contact_index, len(p.buffer), p.buffer.n_p)


def stream_classify(r: Recording, model: ModelState, params: PreprocessingParams,
                    config: VotingConfig) -> list[Decision]:
    """Replay a recording through a :class:`StreamSession`, one 5 ms tick at a time."""
    feats = feature_stream(r, params.literal_velocity_error)
    session = StreamSession(model, params, config, recording_id=r.recording_id)
    decisions: list[Decision] = []
    for i in range(len(r)):
        decisions.extend(session.push(feats[i], bool(r.contact[i]), int(r.t_ms[i])))
    session.close()
    return decisions


def offline_contact_probs(recordings: list[Recording], model: ModelState, params: PreprocessingParams,
                          config: VotingConfig) -> list[tuple[Recording, int, np.ndarray]]:
    """Per contact, the n_p batched window predictions a live session would make.

    Windows end at trigger + ceil(offset/5) + i*infer_every ticks, i < n_p. Contacts
    whose windows leave the recording are skipped.
    """
    feats_all = []
    index = []
    for r in recordings:
        feats = feature_stream(r, params.literal_velocity_error)
        onsets = contact_onsets(r)[:3]
        for ci, trig in enumerate(onsets):
            ends = trig + first_inference_offset_ticks(params) + np.arange(config.n_p) * config.infer_every
            if ends[0] - WINDOW_LEN + 1 < 0 or ends[-1] + config.infer_every >= len(r):
                continue
            windows = np.stack([feats[e - WINDOW_LEN + 1:e + 1] for e in ends])
            feats_all.append(windows)
            index.append((r, ci))
    if not feats_all:
        return []
    probs = predict_proba(model, np.concatenate(feats_all))
    out = []
    for k, (r, ci) in enumerate(index):
        out.append((r, ci, probs[k * config.n_p:(k + 1) * config.n_p]))
    return out


def offline_classify(recordings: list[Recording], model: ModelState, params: PreprocessingParams,
                     config: VotingConfig) -> list[tuple[Recording, int, ClassLabel]]:
    """Batched equivalent of :func:`stream_classify` for evaluation sweeps."""
    return [(r, ci, vote(VoteBuffer.of(p), config.method, config.hard_tie))
            for r, ci, p in offline_contact_probs(recordings, model, params, config)]


def decision_tick(trigger_tick: int, params: PreprocessingParams, config: VotingConfig) -> int:
    return trigger_tick + math.ceil(params.delta_offset_ms / PERIOD_MS) + config.n_p * config.infer_every
