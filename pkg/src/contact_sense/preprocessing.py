"""Fixed- and sliding-window extraction of 40x21 feature matrices around contacts."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .types import (
    NUM_JOINTS,
    PERIOD_MS,
    WINDOW_LEN,
    LabeledDataset,
    Recording,
    Window,
    contact_onsets,
    detect_contacts,
)

log = logging.getLogger(__name__)


class WindowMode(str, enum.Enum):
    FIXED = "fixed"
    SLIDING = "sliding"


class WindowOutOfBounds(ValueError):
    """The requested window does not lie inside the recording."""


@dataclass(frozen=True)
class PreprocessingParams:
    mode: WindowMode = WindowMode.SLIDING
    delta_offset_ms: int = 15
    delta_step_samples: int = 1  # stride between sliding windows, in 5 ms samples
    horizon_ms: int = 300
    window_len: int = WINDOW_LEN
    # Zero the velocity-error columns (desired minus desired, as literally printed).
    literal_velocity_error: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", WindowMode(self.mode))
        if self.delta_offset_ms < 0:
            raise ValueError(f"delta_offset_ms must be >= 0, got {self.delta_offset_ms}")
        if self.delta_offset_ms % PERIOD_MS:
            raise ValueError(f"delta_offset_ms must be a multiple of {PERIOD_MS}, got {self.delta_offset_ms}")
        if self.delta_step_samples is None or self.mode is WindowMode.FIXED:
            object.__setattr__(self, "delta_step_samples", 1)
        if self.delta_step_samples < 1:
            raise ValueError(f"delta_step_samples must be positive, got {self.delta_step_samples}")
        if self.window_len != WINDOW_LEN:
            raise ValueError(f"window_len is fixed at {WINDOW_LEN}")
        if self.horizon_ms % PERIOD_MS:
            raise ValueError(f"horizon_ms must be a multiple of {PERIOD_MS}")

    @property
    def window_span_ms(self) -> int:
        return self.window_len * PERIOD_MS

    @property
    def step_ms(self) -> int:
        return self.delta_step_samples * PERIOD_MS

    def as_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        if self.mode is WindowMode.FIXED:
            d["delta_step_samples"] = None
        return d

    def label(self) -> str:
        if self.mode is WindowMode.FIXED:
            return f"fixed_off{self.delta_offset_ms}"
        return f"sliding_off{self.delta_offset_ms}_step{self.delta_step_samples}"


def compute_t_end(t_contact: int, params: PreprocessingParams, i: int = 0) -> int:
    if i < 0:
        raise ValueError(f"window index must be >= 0, got {i}")
    if params.mode is WindowMode.FIXED and i > 0:
        raise ValueError("fixed mode has a single window per contact (i must be 0)")
    return int(t_contact) + params.delta_offset_ms + i * params.step_ms


def windows_per_contact(params: PreprocessingParams) -> int:
    if params.mode is WindowMode.FIXED:
        return 1
    if params.delta_offset_ms > params.horizon_ms:
        raise ValueError(
            f"delta_offset_ms ({params.delta_offset_ms}) exceeds the capture horizon ({params.horizon_ms})"
        )
    return (params.horizon_ms - params.delta_offset_ms) // params.step_ms + 1


def _feature_rows(r: Recording, lo: int, hi: int, literal_velocity_error: bool) -> np.ndarray:
    pos_err = r.q_desired[lo:hi] - r.q_actual[lo:hi]
    if literal_velocity_error:
        vel_err = r.qdot_desired[lo:hi] - r.qdot_desired[lo:hi]
    else:
        vel_err = r.qdot_desired[lo:hi] - r.qdot_actual[lo:hi]
    return np.concatenate([pos_err, vel_err, r.tau_J[lo:hi]], axis=1)


def build_feature_matrix(r: Recording, t_end: int, literal_velocity_error: bool = False) -> np.ndarray:
    """Rows for the 40 samples ending at ``t_end`` inclusive: [e_J, e_dot_J, tau_J]."""
    end = r.index_of(t_end)
    start = end - WINDOW_LEN + 1
    if start < 0 or end >= len(r):
        raise WindowOutOfBounds(
            f"window out of bounds: t_end={t_end} ms needs samples {start}..{end}, "
            f"recording {r.recording_id!r} has 0..{len(r) - 1}"
        )
    return _feature_rows(r, start, end + 1, literal_velocity_error)


def feature_stream(r: Recording, literal_velocity_error: bool = False) -> np.ndarray:
    """Per-sample feature rows for the whole recording, shape (n, 21)."""
    return _feature_rows(r, 0, len(r), literal_velocity_error)


def contact_window_ends(r: Recording, params: PreprocessingParams) -> list[tuple[int, list[int]]]:
    """For every retained contact: (contact index, candidate t_end list before cleaning)."""
    events = detect_contacts(r)
    n = 1 if params.mode is WindowMode.FIXED else windows_per_contact(params)
    return [(ci, [compute_t_end(ev.t_contact, params, i) for i in range(n)]) for ci, ev in enumerate(events)]


def extract_contact_windows(r: Recording, params: PreprocessingParams) -> tuple[list[Window], int]:
    """Windows for one recording plus the number discarded by cleaning.

    A window is discarded when it leaves the recording or reaches the onset of
    the following contact.
    """
    onsets = [int(r.t_ms[i]) for i in contact_onsets(r)]
    out: list[Window] = []
    discarded = 0
    for ci, ends in contact_window_ends(r, params):
        next_onset = onsets[ci + 1] if ci + 1 < len(onsets) else None
        for wi, t_end in enumerate(ends):
            if next_onset is not None and t_end >= next_onset:
                discarded += 1
                continue
            try:
                x = build_feature_matrix(r, t_end, params.literal_velocity_error)
            except WindowOutOfBounds:
                discarded += 1
                continue
            out.append(Window(x, r.label, t_end, (r.recording_id, ci, wi)))
    return out, discarded


def build_dataset(recordings: list[Recording], params: PreprocessingParams) -> LabeledDataset:
    if not recordings:
        raise ValueError("no recordings given")
    windows: list[Window] = []
    discarded = 0
    for r in sorted(recordings, key=lambda rec: rec.recording_id):
        ws, d = extract_contact_windows(r, params)
        windows.extend(ws)
        discarded += d
    if discarded:
        log.info("discarded %d out-of-bounds windows (%s)", discarded, params.label())
    provenance = params.as_dict()
    provenance["discarded"] = discarded
    return LabeledDataset(tuple(windows), provenance)


def theoretical_size(num_contacts: int, params: PreprocessingParams) -> int:
    return num_contacts * windows_per_contact(params)


def sweep_grid() -> list[PreprocessingParams]:
    """The 16 preprocessing configurations: 4 fixed offsets and 2 strides x 6 sliding offsets."""
    grid = [PreprocessingParams(WindowMode.FIXED, off, 1) for off in (25, 50, 75, 100)]
    for step in (1, 4):
        for off in (5, 15, 25, 50, 75, 100):
            grid.append(PreprocessingParams(WindowMode.SLIDING, off, step))
    return grid


def first_inference_offset_ticks(params: PreprocessingParams) -> int:
    return math.ceil(params.delta_offset_ms / PERIOD_MS)


__all__ = [
    "WindowMode",
    "WindowOutOfBounds",
    "PreprocessingParams",
    "compute_t_end",
    "windows_per_contact",
    "build_feature_matrix",
    "feature_stream",
    "extract_contact_windows",
    "build_dataset",
    "theoretical_size",
    "sweep_grid",
    "first_inference_offset_ticks",
    "NUM_JOINTS",
]
