import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contact_sense import models as M
from contact_sense.inference import (
    InsufficientPredictions,
    PartialDecisionError,
    StreamSession,
    VoteBuffer,
    VoteMethod,
    VotingConfig,
    decision_tick,
    latency,
    latency_bounds,
    offline_classify,
    stream_classify,
)
from contact_sense.preprocessing import PreprocessingParams, WindowMode, feature_stream
from contact_sense.types import ClassLabel

from conftest import flags_with_onsets, make_recording

A, B, C = np.eye(3)


def onehot_buffer(classes):
    return VoteBuffer.of([np.eye(3)[c] for c in classes])


def test_hard_vote_mode():
    assert VoteBuffer.of([A, A, B]).n_p == 3
    assert _vote([A, A, B], "hard") is ClassLabel.from_index(0)


def _vote(probs, method, tie="recent"):
    from contact_sense.inference import vote
    return vote(VoteBuffer.of(probs), method, tie)


def test_soft_vote_mean():
    probs = [(0.6, 0.3, 0.1), (0.1, 0.8, 0.1), (0.1, 0.7, 0.2)]
    assert _vote(probs, "soft") is ClassLabel.from_index(1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3))
def test_single_prediction_degenerate(p):
    p = np.array(p) / sum(p)
    assert _vote([p], "hard") is _vote([p], "soft") is ClassLabel.from_index(int(np.argmax(p)))


def test_vote_requires_full_buffer():
    from contact_sense.inference import vote
    buf = VoteBuffer(4)
    buf.push(A)
    with pytest.raises(InsufficientPredictions, match="insufficient predictions"):
        vote(buf, "hard")


def test_buffer_evicts_oldest():
    buf = VoteBuffer(2)
    for p in (A, B, C):
        buf.push(p)
    assert [int(e.argmax()) for e in buf.entries] == [1, 2]


def test_hard_vote_exhaustive_n4():
    from contact_sense.inference import vote
    for combo in itertools.product(range(3), repeat=4):
        counts = np.bincount(combo, minlength=3)
        modes = set(np.flatnonzero(counts == counts.max()).tolist())
        got = vote(onehot_buffer(combo), VoteMethod.HARD).index
        assert got in modes
        # tie rule: the most recent of the tied classes
        assert got == next(c for c in reversed(combo) if c in modes)
        assert vote(onehot_buffer(combo), VoteMethod.HARD, "lowest").index == min(modes)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.floats(0.001, 1.0), min_size=3, max_size=3), min_size=1, max_size=15),
       st.floats(0.01, 100.0), st.randoms(use_true_random=False))
def test_soft_vote_scale_and_permutation_invariant(rows, scale, rnd):
    probs = [np.array(r) / sum(r) for r in rows]
    base = _vote(probs, "soft")
    assert _vote([p * scale for p in probs], "soft") is base
    shuffled = list(probs)
    rnd.shuffle(shuffled)
    mean_a = np.mean(probs, axis=0)
    if np.sort(mean_a)[-1] - np.sort(mean_a)[-2] > 1e-9:
        assert _vote(shuffled, "soft") is base


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 2), min_size=1, max_size=12), st.randoms(use_true_random=False))
def test_hard_vote_permutation_invariant_without_ties(classes, rnd):
    counts = np.bincount(classes, minlength=3)
    if (counts == counts.max()).sum() > 1:
        return
    shuffled = list(classes)
    rnd.shuffle(shuffled)
    assert _vote([np.eye(3)[c] for c in shuffled], "hard").index == int(counts.argmax())


def test_latency_examples():
    cfg = VotingConfig(model_runtime_ms=7.09, infer_every=3)
    lo, hi = latency_bounds(cfg, 5)
    assert lo == 120 + 7.09 and hi == 225 + 7.09
    assert f"{lo:.2f}" == "127.09" and f"{hi:.2f}" == "232.09"
    assert latency(1, 1, 5, 0.0) == 5.0


def test_decision_tick_arithmetic():
    params = PreprocessingParams(WindowMode.SLIDING, 25, 1)
    assert decision_tick(400, params, VotingConfig(n_p=8, infer_every=3)) == 429


def constant_model(probs):
    """Transformer whose head ignores the input and emits fixed logits."""
    state = M.ModelState.initialize(M.default_spec("transformer"), 0)
    params = dict(state.parameters)
    params["head.w"] = np.zeros_like(params["head.w"])
    params["head.b"] = np.log(np.asarray(probs, dtype=float))
    return M.ModelState(state.spec, params, 0)


def test_stream_decision_tick_matches_oracle():
    n = 700
    r = make_recording(n, flags_with_onsets(n, [400]))
    model = constant_model([0.2, 0.5, 0.3])
    params = PreprocessingParams(WindowMode.SLIDING, 25, 1)
    ds = stream_classify(r, model, params, VotingConfig(n_p=8, infer_every=3))
    assert [d.tick for d in ds] == [429]
    assert ds[0].label is ClassLabel.from_index(1)
    assert ds[0].latency_ms == pytest.approx(127.09, abs=1e-12)


def test_stream_minimal_config_decides_one_tick_after_first_window():
    n = 200
    r = make_recording(n, flags_with_onsets(n, [100]))
    params = PreprocessingParams(WindowMode.SLIDING, 0, 1)
    ds = stream_classify(r, constant_model([0.6, 0.2, 0.2]), params, VotingConfig(n_p=1, infer_every=1))
    assert [d.tick for d in ds] == [101]


def test_stream_three_contacts_three_decisions_in_order():
    n = 1200
    r = make_recording(n, flags_with_onsets(n, [100, 400, 700, 1000]))
    ds = stream_classify(r, constant_model([0.2, 0.2, 0.6]), PreprocessingParams(WindowMode.SLIDING, 15, 1),
                         VotingConfig(n_p=15))
    assert [d.contact_index for d in ds] == [0, 1, 2]
    assert [d.tick for d in ds] == sorted(d.tick for d in ds)


def test_stream_partial_decision_error():
    n = 130
    r = make_recording(n, flags_with_onsets(n, [100]))
    with pytest.raises(PartialDecisionError):
        stream_classify(r, constant_model([0.2, 0.2, 0.6]), PreprocessingParams(WindowMode.SLIDING, 15, 1),
                        VotingConfig(n_p=15))


def test_continuous_mode_keeps_deciding():
    n = 400
    r = make_recording(n, flags_with_onsets(n, [100]))
    params = PreprocessingParams(WindowMode.SLIDING, 0, 1)
    session = StreamSession(constant_model([0.6, 0.2, 0.2]), params, VotingConfig(n_p=2, infer_every=1,
                                                                                  continuous=True))
    feats = feature_stream(r)
    ticks = []
    for i in range(n):
        ticks += [d.tick for d in session.push(feats[i], bool(r.contact[i]), int(r.t_ms[i]))]
    session.close()
    assert ticks[:3] == [102, 103, 104] and len(ticks) > 100


def test_stream_equals_offline_on_synthetic(small_val):
    model = M.ModelState.initialize(M.RnnSpec("gru", num_layers=1, hidden_size=8), 3)
    params = PreprocessingParams(WindowMode.SLIDING, 15, 1)
    for method in ("hard", "soft"):
        cfg = VotingConfig(method=method, n_p=8)
        offline = {(r.recording_id, ci): lab for r, ci, lab in offline_classify(small_val, model, params, cfg)}
        streamed = {(r.recording_id, d.contact_index): d.label
                    for r in small_val for d in stream_classify(r, model, params, cfg)}
        assert streamed == offline and len(offline) == 3 * len(small_val)
