import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contact_sense.preprocessing import (
    PreprocessingParams,
    WindowMode,
    WindowOutOfBounds,
    build_dataset,
    build_feature_matrix,
    compute_t_end,
    extract_contact_windows,
    sweep_grid,
    theoretical_size,
    windows_per_contact,
)
from contact_sense.types import ClassLabel, contact_onsets

import reported_values as pv
from conftest import flags_with_onsets, make_recording


def enumerate_ends(offset, step, horizon=300):
    """Oracle: every t_end = offset + i*step*5 that stays inside the horizon."""
    ends, i = [], 0
    while offset + i * step * 5 <= horizon:
        ends.append(offset + i * step * 5)
        i += 1
    return ends


def sliding(off, step):
    return PreprocessingParams(WindowMode.SLIDING, off, step)


def test_compute_t_end_examples():
    assert compute_t_end(1000, PreprocessingParams(WindowMode.FIXED, 50)) == 1050
    assert compute_t_end(1000, PreprocessingParams(WindowMode.FIXED, 0)) == 1000
    assert compute_t_end(1000, sliding(5, 4), 2) == 1045
    with pytest.raises(ValueError):
        compute_t_end(1000, PreprocessingParams(WindowMode.FIXED, 50), 1)


def test_windows_per_contact_examples():
    assert windows_per_contact(sliding(100, 1)) == 41
    assert theoretical_size(pv.CONTACTS, sliding(100, 1)) == 10455 >= 10327
    assert windows_per_contact(sliding(5, 4)) == 15
    assert theoretical_size(pv.CONTACTS, sliding(5, 4)) == 3825 >= 3774
    assert windows_per_contact(sliding(300, 1)) == 1
    with pytest.raises(ValueError):
        windows_per_contact(sliding(305, 1))


@pytest.mark.parametrize("step,off", sorted(pv.SLIDING_SIZES))
def test_windows_per_contact_matches_enumeration(step, off):
    assert windows_per_contact(sliding(off, step)) == len(enumerate_ends(off, step))


def test_params_validation():
    with pytest.raises(ValueError):
        PreprocessingParams(WindowMode.SLIDING, 7, 1)
    with pytest.raises(ValueError):
        PreprocessingParams(WindowMode.SLIDING, -5, 1)
    with pytest.raises(ValueError):
        PreprocessingParams(WindowMode.SLIDING, 5, 0)
    fixed = PreprocessingParams(WindowMode.FIXED, 25, 9)
    assert fixed.delta_step_samples == 1 and fixed.as_dict()["delta_step_samples"] is None
    assert fixed.window_span_ms == 200


def test_sweep_grid_has_sixteen_configurations():
    grid = sweep_grid()
    assert len(grid) == 16
    assert sum(p.mode is WindowMode.FIXED for p in grid) == 4
    assert len({p.label() for p in grid}) == 16


def test_feature_matrix_identity_tracking_and_constant_torque():
    n = 100
    q = np.random.default_rng(0).normal(size=(n, 7))
    r = make_recording(n, fill={"q_desired": q, "q_actual": q, "qdot_desired": q * 2, "qdot_actual": q * 2,
                                "tau_J": np.full((n, 7), 3.5)})
    x = build_feature_matrix(r, 300)
    assert x.shape == (40, 21)
    assert np.all(x[:, :14] == 0.0)
    assert np.all(x[:, 14:] == 3.5)


def test_feature_matrix_ramp_and_alignment():
    n = 100
    k = np.arange(n, dtype=float)
    q_des = np.zeros((n, 7))
    q_des[:, 2] = 0.001 * k
    r = make_recording(n, fill={"q_desired": q_des})
    x = build_feature_matrix(r, 5 * 60)
    # rows cover samples 21..60 inclusive
    assert np.allclose(x[:, 2], 0.001 * np.arange(21, 61), rtol=0, atol=0)


def test_feature_matrix_out_of_bounds():
    r = make_recording(50)
    with pytest.raises(WindowOutOfBounds, match="window out of bounds"):
        build_feature_matrix(r, 5 * 38)
    with pytest.raises(WindowOutOfBounds):
        build_feature_matrix(r, 5 * 50)
    build_feature_matrix(r, 5 * 39)


def test_velocity_error_literal_switch():
    n = 60
    rng = np.random.default_rng(1)
    r = make_recording(n, fill={"qdot_desired": rng.normal(size=(n, 7)), "qdot_actual": rng.normal(size=(n, 7))})
    corrected = build_feature_matrix(r, 5 * 59)
    literal = build_feature_matrix(r, 5 * 59, literal_velocity_error=True)
    assert np.allclose(corrected[:, 7:14], r.qdot_desired[20:] - r.qdot_actual[20:])
    assert np.all(literal[:, 7:14] == 0.0)


def test_single_contact_sliding_yields_fifteen_windows():
    n = 400
    r = make_recording(n, flags_with_onsets(n, [100]))
    windows, discarded = extract_contact_windows(r, sliding(5, 4))
    assert len(windows) == 15 and discarded == 0
    assert [w.t_end for w in windows] == [500 + e for e in enumerate_ends(5, 4)]


def test_cleaning_discards_windows_reaching_next_contact():
    n = 400
    r = make_recording(n, flags_with_onsets(n, [50, 100]))  # second onset 250 ms after the first
    windows, discarded = extract_contact_windows(r, sliding(100, 1))
    first = [w for w in windows if w.source[1] == 0]
    assert all(w.t_end < 500 for w in first)
    assert len(first) == len([e for e in enumerate_ends(100, 1) if 250 + e < 500])
    assert discarded == 41 - len(first)


def test_cleaning_discards_windows_before_recording_start():
    r = make_recording(200, flags_with_onsets(200, [10]))
    windows, discarded = extract_contact_windows(r, PreprocessingParams(WindowMode.FIXED, 25))
    assert windows == [] and discarded == 1


def _multi_contact_recordings(count, rng):
    out = []
    for i in range(count):
        n = 800
        onsets = sorted(rng.choice(np.arange(10, 700, 60), size=3, replace=False).tolist())
        tau = rng.normal(size=(n, 7))
        out.append(make_recording(n, flags_with_onsets(n, onsets, 10), label=ClassLabel.from_index(i % 3),
                                  rid=f"r{i}", fill={"tau_J": tau}))
    return out


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**16), st.sampled_from(sweep_grid()))
def test_dataset_size_accounting(seed, params):
    recs = _multi_contact_recordings(3, np.random.default_rng(seed))
    ds_windows = sum(len(extract_contact_windows(r, params)[0]) for r in recs)
    contacts = sum(min(3, len(contact_onsets(r))) for r in recs)
    try:
        ds = build_dataset(recs, params)
    except ValueError:
        assert ds_windows == 0
        return
    assert len(ds) == contacts * windows_per_contact(params) - ds.provenance["discarded"]
    assert build_dataset(recs, params).provenance == ds.provenance


@settings(max_examples=20, deadline=None)
@given(st.sampled_from([1, 2, 4, 8, 39]), st.sampled_from([5, 15, 50]))
def test_consecutive_sliding_windows_overlap(step, off):
    n = 500
    rng = np.random.default_rng(step * 100 + off)
    r = make_recording(n, flags_with_onsets(n, [100]), fill={"tau_J": rng.normal(size=(n, 7))})
    windows, _ = extract_contact_windows(r, sliding(off, step))
    for a, b in zip(windows, windows[1:]):
        assert np.array_equal(a.features[step:], b.features[:40 - step])


@settings(max_examples=20, deadline=None)
@given(st.integers(-200, 200).map(lambda k: 5 * k))
def test_translation_consistency(shift):
    n = 300
    rng = np.random.default_rng(3)
    r = make_recording(n, flags_with_onsets(n, [80]), fill={"tau_J": rng.normal(size=(n, 7))})
    moved = r.shifted(shift)
    a, _ = extract_contact_windows(r, sliding(15, 4))
    b, _ = extract_contact_windows(moved, sliding(15, 4))
    assert [w.t_end + shift for w in a] == [w.t_end for w in b]
    assert all(np.array_equal(x.features, y.features) for x, y in zip(a, b))


def test_no_normalisation_applied():
    n = 300
    tau = np.full((n, 7), 1234.5)
    r = make_recording(n, flags_with_onsets(n, [100]), fill={"tau_J": tau})
    ds = build_dataset([r], sliding(5, 1))
    assert np.all(ds.features()[:, :, 14:] == 1234.5)
