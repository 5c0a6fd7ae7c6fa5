"""Recordings, contacts, windows and labels shared across the pipeline."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

PERIOD_MS = 5
NUM_JOINTS = 7
WINDOW_LEN = 40
NUM_FEATURES = 3 * NUM_JOINTS
MAX_CONTACTS_PER_RECORDING = 3


class ClassLabel(enum.Enum):
    """Contacted object class; ``index`` is the output-layer position."""

    HUMAN = "Human"
    ALUMINUM = "Aluminum"
    PVC = "PVC"

    @property
    def index(self) -> int:
        return _LABEL_INDEX[self]

    @classmethod
    def from_index(cls, i: int) -> "ClassLabel":
        return _LABELS[int(i)]

    @classmethod
    def parse(cls, text: str) -> "ClassLabel":
        for label in cls:
            if text.strip().lower() in (label.value.lower(), label.name.lower()):
                return label
        raise ValueError(f"unknown class label {text!r}")


_LABELS = (ClassLabel.HUMAN, ClassLabel.ALUMINUM, ClassLabel.PVC)
_LABEL_INDEX = {label: i for i, label in enumerate(_LABELS)}
NUM_CLASSES = len(_LABELS)
LABELS = _LABELS


class RecordingError(ValueError):
    """A recording violates its invariants."""


def _frozen(arr, shape_tail: tuple[int, ...], name: str) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    if out.shape[1:] != shape_tail:
        raise RecordingError(f"{name} must have trailing shape {shape_tail}, got {out.shape}")
    if not np.all(np.isfinite(out)):
        raise RecordingError(f"{name} contains non-finite values")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Sample:
    t: int
    q_desired: np.ndarray
    q_actual: np.ndarray
    qdot_desired: np.ndarray
    qdot_actual: np.ndarray
    tau_J: np.ndarray
    contact: bool


@dataclass(frozen=True, eq=False)
class Recording:
    """A uniformly sampled 7-joint signal stream with one class label.

    Signals are stored column-wise as ``(n, 7)`` arrays; ``samples``/``sample(i)``
    give the row view.
    """

    recording_id: str
    t_ms: np.ndarray
    q_desired: np.ndarray
    q_actual: np.ndarray
    qdot_desired: np.ndarray
    qdot_actual: np.ndarray
    tau_J: np.ndarray
    contact: np.ndarray
    label: ClassLabel
    motion_id: str = ""
    setup_id: str = ""
    period_ms: int = PERIOD_MS

    def __post_init__(self):
        if self.period_ms != PERIOD_MS:
            raise RecordingError(f"period_ms must be {PERIOD_MS}, got {self.period_ms}")
        t = np.array(self.t_ms, dtype=np.int64)
        if t.ndim != 1:
            raise RecordingError("t_ms must be one-dimensional")
        if t.size > 1 and np.any(np.diff(t) != self.period_ms):
            bad = int(np.nonzero(np.diff(t) != self.period_ms)[0][0]) + 1
            raise RecordingError(
                f"timestamps must increase by exactly {self.period_ms} ms (sample {bad}: "
                f"{t[bad - 1]} -> {t[bad]})"
            )
        t.setflags(write=False)
        object.__setattr__(self, "t_ms", t)
        for name in ("q_desired", "q_actual", "qdot_desired", "qdot_actual", "tau_J"):
            arr = _frozen(getattr(self, name), (NUM_JOINTS,), name)
            if arr.shape[0] != t.size:
                raise RecordingError(f"{name} has {arr.shape[0]} rows, expected {t.size}")
            object.__setattr__(self, name, arr)
        flags = np.array(self.contact, dtype=bool)
        if flags.shape != t.shape:
            raise RecordingError(f"contact has shape {flags.shape}, expected {t.shape}")
        flags.setflags(write=False)
        object.__setattr__(self, "contact", flags)
        if not isinstance(self.label, ClassLabel):
            raise RecordingError(f"label must be a ClassLabel, got {self.label!r}")

    def __len__(self) -> int:
        return int(self.t_ms.size)

    def sample(self, i: int) -> Sample:
        return Sample(
            t=int(self.t_ms[i]),
            q_desired=self.q_desired[i],
            q_actual=self.q_actual[i],
            qdot_desired=self.qdot_desired[i],
            qdot_actual=self.qdot_actual[i],
            tau_J=self.tau_J[i],
            contact=bool(self.contact[i]),
        )

    @property
    def samples(self) -> list[Sample]:
        return [self.sample(i) for i in range(len(self))]

    def __iter__(self) -> Iterator[Sample]:
        return (self.sample(i) for i in range(len(self)))

    def index_of(self, t: int) -> int:
        """Sample index of timestamp ``t`` (may fall outside the recording)."""
        if len(self) == 0:
            raise RecordingError("no samples")
        off = int(t) - int(self.t_ms[0])
        if off % self.period_ms:
            raise RecordingError(f"time {t} ms is not on the {self.period_ms} ms sample grid")
        return off // self.period_ms

    def shifted(self, dt_ms: int) -> "Recording":
        """Same signals with every timestamp shifted by ``dt_ms``."""
        return Recording(
            recording_id=self.recording_id,
            t_ms=self.t_ms + int(dt_ms),
            q_desired=self.q_desired,
            q_actual=self.q_actual,
            qdot_desired=self.qdot_desired,
            qdot_actual=self.qdot_actual,
            tau_J=self.tau_J,
            contact=self.contact,
            label=self.label,
            motion_id=self.motion_id,
            setup_id=self.setup_id,
        )

    @classmethod
    def from_samples(cls, recording_id: str, samples: list[Sample], label: ClassLabel,
                     motion_id: str = "", setup_id: str = "") -> "Recording":
        def col(name):
            return np.array([getattr(s, name) for s in samples], dtype=np.float64).reshape(-1, NUM_JOINTS)

        return cls(
            recording_id=recording_id,
            t_ms=np.array([s.t for s in samples], dtype=np.int64),
            q_desired=col("q_desired"),
            q_actual=col("q_actual"),
            qdot_desired=col("qdot_desired"),
            qdot_actual=col("qdot_actual"),
            tau_J=col("tau_J"),
            contact=np.array([s.contact for s in samples], dtype=bool),
            label=label,
            motion_id=motion_id,
            setup_id=setup_id,
        )


@dataclass(frozen=True)
class ContactEvent:
    t_contact: int
    label: ClassLabel


@dataclass(frozen=True, eq=False)
class Window:
    """One 40x21 feature matrix: 7 position errors, 7 velocity errors, 7 torques per row."""

    features: np.ndarray
    label: ClassLabel
    t_end: int
    source: tuple[str, int, int]  # (recording id, contact index, window index)

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64)
        if x.shape != (WINDOW_LEN, NUM_FEATURES):
            raise ValueError(f"window must be {WINDOW_LEN}x{NUM_FEATURES}, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("window contains non-finite values")
        x.setflags(write=False)
        object.__setattr__(self, "features", x)

    @property
    def group(self) -> tuple[str, int]:
        return self.source[0], self.source[1]


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    windows: tuple[Window, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "windows", tuple(self.windows))
        if not self.windows:
            raise ValueError("dataset is empty")

    def __len__(self) -> int:
        return len(self.windows)

    def features(self, indices=None) -> np.ndarray:
        ws = self.windows if indices is None else [self.windows[i] for i in indices]
        return np.stack([w.features for w in ws])

    def targets(self, indices=None) -> np.ndarray:
        ws = self.windows if indices is None else [self.windows[i] for i in indices]
        return np.array([w.label.index for w in ws], dtype=np.int64)

    def groups(self) -> list[tuple[str, int]]:
        return [w.group for w in self.windows]

    def subset(self, indices) -> "LabeledDataset":
        return LabeledDataset(tuple(self.windows[i] for i in indices), dict(self.provenance))


def contact_onsets(r: Recording) -> list[int]:
    """Sample indices of every false->true transition of the contact flag.

    A recording that starts with the flag already set has no observable onset
    for that first contact.
    """
    flags = r.contact
    if flags.size == 0:
        return []
    return (np.nonzero(flags[1:] & ~flags[:-1])[0] + 1).tolist()


def detect_contacts(r: Recording, max_contacts: int = MAX_CONTACTS_PER_RECORDING) -> list[ContactEvent]:
    """Contact events at rising edges of the contact flag, first ``max_contacts`` only."""
    if len(r) == 0:
        raise RecordingError("no samples")
    onsets = contact_onsets(r)[:max_contacts]
    return [ContactEvent(int(r.t_ms[i]), r.label) for i in onsets]
