"""Acceptance criteria 1-10, one or more tests per criterion.

A pass/fail line per criterion is printed in the terminal summary (see conftest.py).
Criteria 6 and 7 train the full-size models on the default synthetic data and take
several minutes on one core.
"""

import itertools
import math
import time
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contact_sense import models as M
from contact_sense import numerics as nx
from contact_sense import synthetic as S
from contact_sense import training as T
from contact_sense.evaluation import pct, score
from contact_sense.inference import (
    VoteBuffer,
    VotingConfig,
    decision_tick,
    latency_bounds,
    offline_classify,
    offline_contact_probs,
    stream_classify,
    vote,
)
from contact_sense.numerics import Tensor
from contact_sense.preprocessing import PreprocessingParams, WindowMode, build_dataset, windows_per_contact
from contact_sense.types import ClassLabel, contact_onsets

import reported_values as pv

FAMILIES = ("gru", "lstm", "transformer")


def criterion(n, title):
    return pytest.mark.criterion(n, title)


# -- 1 -------------------------------------------------------------------------------------------
@criterion(1, "latency bounds 127.09 / 232.09 ms")
def test_latency_bounds_exact():
    lo, hi = latency_bounds(VotingConfig(infer_every=3, model_runtime_ms=7.09, n_p_min=8, n_p_max=15), 5)
    print(f"latency bounds {lo!r} ms, {hi!r} ms")
    assert lo == 8 * 3 * 5 + 7.09 and hi == 15 * 3 * 5 + 7.09
    assert lo == pv.LATENCY_MIN_MS and hi == pv.LATENCY_MAX_MS


# -- 2 -------------------------------------------------------------------------------------------
@criterion(2, "dataset sizes vs theoretical window counts")
def test_dataset_size_arithmetic():
    worst = 0.0
    for offset, reported in pv.FIXED_SIZES.items():
        theoretical = pv.CONTACTS
        gap = (theoretical - reported) / theoretical
        assert reported <= theoretical and gap <= 0.05
        worst = max(worst, gap)
    for (step, offset), reported in pv.SLIDING_SIZES.items():
        theoretical = windows_per_contact(PreprocessingParams(WindowMode.SLIDING, offset, step)) * pv.CONTACTS
        gap = (theoretical - reported) / theoretical
        assert reported <= theoretical and gap <= 0.05, (step, offset, theoretical, reported)
        worst = max(worst, gap)
    assert len(pv.SLIDING_SIZES) == 12 and len(pv.FIXED_SIZES) == 4
    print(f"largest relative gap {worst:.4f}")


@criterion(2, "dataset sizes vs theoretical window counts")
def test_step_in_milliseconds_would_contradict_sizes():
    # read as 4 ms, a step-4 configuration would yield far more windows than reported
    for (step, offset), reported in pv.SLIDING_SIZES.items():
        if step == 4:
            per_contact = math.floor((300 - offset) / 4) + 1
            assert per_contact * pv.CONTACTS > 1.05 * reported


# -- 3 -------------------------------------------------------------------------------------------
@criterion(3, "metrics reproduce the reported class-wise table")
def test_metrics_fidelity():
    order = (ClassLabel.ALUMINUM, ClassLabel.PVC, ClassLabel.HUMAN)
    pairs = [(order[i], order[j]) for i, row in enumerate(pv.CONFUSION_AL_PVC_HUMAN)
             for j, n in enumerate(row) for _ in range(n)]
    rep = score(pairs)
    idx = [c.index for c in order]
    got = {
        "precision": [pct(rep.precision[i]) for i in idx],
        "recall": [pct(rep.recall[i]) for i in idx],
        "f1": [pct(rep.f1[i]) for i in idx],
        "accuracy": pct(rep.accuracy),
    }
    print(got)
    assert got["precision"] == [f"{v:.2f}%" for v in pv.TABLE_PRECISION]
    assert got["recall"] == [f"{v:.2f}%" for v in pv.TABLE_RECALL]
    assert got["f1"] == [f"{v:.2f}%" for v in pv.TABLE_F1]
    assert got["accuracy"] == f"{pv.OVERALL_ACCURACY:.2f}%"


# -- 4 -------------------------------------------------------------------------------------------
def _input_grad_error(family, seed):
    spec = M.default_spec(family)
    state = M.ModelState.initialize(spec, seed)
    params = M.as_param_tensors(state)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(40, 21))
    target = int(rng.integers(3))

    def f(xt):
        return nx.cross_entropy(M.logits(spec, params, nx.reshape(xt, (1, 40, 21))), np.array([target]))

    def batch_f(xs):
        z = M.logits(spec, params, Tensor(xs)).data
        z = z - z.max(axis=1, keepdims=True)
        return np.log(np.exp(z).sum(axis=1)) - z[:, target]

    return nx.grad_check(f, x, eps=1e-6, batch_f=batch_f)


@criterion(4, "grad_check < 1e-3 for every family on 20 seeds, under 2 min")
def test_gradient_correctness():
    start = time.perf_counter()
    worst = {}
    for family in FAMILIES:
        errs = [_input_grad_error(family, seed) for seed in range(20)]
        worst[family] = max(errs)
    elapsed = time.perf_counter() - start
    print(f"max relative errors {worst}; {elapsed:.1f} s")
    assert all(e < 1e-3 for e in worst.values())
    assert elapsed < 120


# -- 5 -------------------------------------------------------------------------------------------
@pytest.fixture(scope="module")
def streaming_setup():
    train = S.generate(S.SyntheticConfig(num_recordings=12, seed=21, id_prefix="t"))
    recs = S.generate(S.SyntheticConfig(num_recordings=50, seed=22, id_prefix="s"))
    params = PreprocessingParams(WindowMode.SLIDING, 15, 4)
    ds = build_dataset(train, params)
    spec = M.RnnSpec("gru", num_layers=1, hidden_size=12, dropout_p=0.0)
    state, _ = T.train_final(ds, T.make_split(ds, 0), spec, T.default_train_config("gru", max_epochs=3))
    return recs, state, params


@criterion(5, "streaming equals offline batch + voting on 50 recordings, under 1 min")
@pytest.mark.parametrize("method", ["hard", "soft"])
def test_stream_equals_offline(streaming_setup, method):
    recs, state, params = streaming_setup
    cfg = VotingConfig(method=method, n_p=8)
    start = time.perf_counter()
    offline = {(r.recording_id, ci): (lab, p.mean(axis=0))
               for (r, ci, lab), (_, _, p) in zip(offline_classify(recs, state, params, cfg),
                                                  offline_contact_probs(recs, state, params, cfg))}
    streamed = {}
    for r in recs:
        onsets = contact_onsets(r)
        for d in stream_classify(r, state, params, cfg):
            assert d.tick == decision_tick(onsets[d.contact_index], params, cfg)
            streamed[(r.recording_id, d.contact_index)] = (d.label, np.array(d.mean_probs))
    elapsed = time.perf_counter() - start
    labels = Counter(lab for lab, _ in offline.values())
    print(f"{len(streamed)} decisions, labels {dict(labels)}, {elapsed:.1f} s")
    assert len(recs) == 50 and sorted(streamed) == sorted(offline) and len(offline) == 150
    for key, (lab, probs) in offline.items():
        assert streamed[key][0] is lab
        assert np.allclose(streamed[key][1], probs, rtol=0, atol=1e-12)
    assert len(labels) > 1
    assert elapsed < 60


# -- 6 and 7 ---------------------------------------------------------------------------------------
@pytest.fixture(scope="module")
def default_data():
    return S.generate(S.train_config(0)), S.generate(S.val_config(1))


_trained: dict = {}


def trained(family, params, data):
    """Default-hyperparameter model for ``family`` on ``params``; cached across criteria 6 and 7."""
    key = (family, params.label())
    if key not in _trained:
        train, _ = data
        ds = build_dataset(train, params)
        start = time.perf_counter()
        state, _ = T.train_final(ds, T.make_split(ds, 0), M.default_spec(family), T.default_train_config(family))
        _trained[key] = (state, time.perf_counter() - start, len(ds))
    return _trained[key]


def best_row_params(family):
    _, offset, step, _, _, _ = pv.BEST_ROWS[family]
    return PreprocessingParams(WindowMode.SLIDING, offset, step)


@criterion(6, "desk-scale learning: accuracy >= 90% and Human recall >= 95% per family")
@pytest.mark.parametrize("family", FAMILIES)
def test_desk_scale_learning(default_data, family):
    _, offset, step, method, n_p, _ = pv.BEST_ROWS[family]
    params = best_row_params(family)
    state, seconds, size = trained(family, params, default_data)
    res = offline_classify(default_data[1], state, params, VotingConfig(method=method, n_p=n_p))
    rep = score([(r.label, lab) for r, _, lab in res])
    human = rep.recall[ClassLabel.HUMAN.index]
    print(f"{family} {params.label()} {method} N_p={n_p}: {size} windows, {len(res)} contacts, "
          f"accuracy {pct(rep.accuracy)}, Human recall {pct(human)}, trained in {seconds:.0f} s, "
          f"best epoch {state.meta['best_epoch']}")
    assert len(res) == 3 * len(default_data[1])
    assert rep.accuracy >= 0.90
    assert human >= 0.95
    assert seconds < 15 * 60


def best_voting_accuracy(state, params, val):
    """Best contact-level accuracy over hard/soft voting and N_p in 8..15."""
    probs = offline_contact_probs(val, state, params, VotingConfig(n_p=15))
    assert len(probs) == 3 * len(val)
    best = 0.0
    for method, n_p in itertools.product(("hard", "soft"), range(8, 16)):
        pairs = [(r.label, vote(VoteBuffer.of(p[:n_p]), method)) for r, _, p in probs]
        best = max(best, score(pairs).accuracy)
    return best


@criterion(7, "best sliding configuration >= best fixed configuration per family")
@pytest.mark.parametrize("family", FAMILIES)
def test_sliding_at_least_fixed(default_data, family):
    # the sliding side uses one configuration only, which can only lower its best
    sliding_params = best_row_params(family)
    sliding = best_voting_accuracy(trained(family, sliding_params, default_data)[0], sliding_params,
                                   default_data[1])
    fixed = {}
    for offset in sorted(pv.FIXED_SIZES):
        params = PreprocessingParams(WindowMode.FIXED, offset)
        fixed[offset] = best_voting_accuracy(trained(family, params, default_data)[0], params, default_data[1])
    print(f"{family}: sliding {sliding_params.label()} {pct(sliding)}; fixed "
          + ", ".join(f"off{o} {pct(a)}" for o, a in fixed.items()))
    assert sliding >= max(fixed.values())


# -- 8 -------------------------------------------------------------------------------------------
def mode_with_recent_tie(classes):
    counts = Counter(classes)
    top = max(counts.values())
    tied = {c for c, n in counts.items() if n == top}
    return next(c for c in reversed(classes) if c in tied)


@criterion(8, "voting properties")
def test_hard_vote_is_mode_exhaustive():
    eye = np.eye(3)
    n = 0
    for classes in itertools.product(range(3), repeat=4):
        buf = VoteBuffer.of([eye[c] for c in classes])
        got = vote(buf, "hard").index
        counts = Counter(classes)
        assert counts[got] == max(counts.values())
        assert got == mode_with_recent_tie(list(classes))
        n += 1
    assert n == 81


probs_rows = st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3).map(lambda v: np.array(v) / sum(v))


@criterion(8, "voting properties")
@settings(max_examples=200, deadline=None)
@given(st.lists(probs_rows, min_size=1, max_size=15), st.floats(1e-3, 1e3))
def test_soft_vote_scale_invariant(rows, scale):
    a = vote(VoteBuffer.of(rows), "soft")
    b = vote(VoteBuffer.of([scale * r for r in rows]), "soft")
    assert a is b


@criterion(8, "voting properties")
@settings(max_examples=200, deadline=None)
@given(probs_rows)
def test_single_prediction_degeneracy(row):
    expected = ClassLabel.from_index(int(np.argmax(row)))
    assert vote(VoteBuffer.of([row]), "hard") is expected
    assert vote(VoteBuffer.of([row]), "soft") is expected


# -- 9 -------------------------------------------------------------------------------------------
def erpe_enumerated(x, wq, wk, wv, w):
    """Nine (i, j) attention terms spelled out for L=3, d=2, one head."""
    def proj(m, i):
        return [x[i][0] * m[0][c] + x[i][1] * m[1][c] for c in range(2)]

    q = [proj(wq, i) for i in range(3)]
    k = [proj(wk, i) for i in range(3)]
    v = [proj(wv, i) for i in range(3)]
    out = []
    for i in range(3):
        s = [(q[i][0] * k[j][0] + q[i][1] * k[j][1]) / math.sqrt(2) for j in range(3)]
        e = [math.exp(sj - max(s)) for sj in s]
        a = [e[j] / sum(e) + w[i - j + 2] for j in range(3)]  # normalised weight plus relative scalar
        out.append([a[0] * v[0][c] + a[1] * v[1][c] + a[2] * v[2][c] for c in range(2)])
    return np.array(out)


@criterion(9, "relative attention brute force and zero-table reduction")
@pytest.mark.parametrize("seed", range(5))
def test_erpe_brute_force(seed):
    r = np.random.default_rng(100 + seed)
    x, wq, wk, wv = (r.normal(size=s) for s in [(3, 2), (2, 2), (2, 2), (2, 2)])
    w = r.normal(size=5)
    got = M.erpe_attention(Tensor(x[None]), Tensor(wq), Tensor(wk), Tensor(wv), Tensor(w[:, None]), 1).data[0]
    assert np.max(np.abs(got - erpe_enumerated(x, wq, wk, wv, w))) <= 1e-12


@criterion(9, "relative attention brute force and zero-table reduction")
def test_erpe_zero_table_bitwise():
    r = np.random.default_rng(7)
    x = Tensor(r.normal(size=(3, 20, 8)))
    wq, wk, wv = (Tensor(r.normal(size=(8, 8))) for _ in range(3))
    for heads in (1, 2):
        assert np.array_equal(M.erpe_attention(x, wq, wk, wv, Tensor(np.zeros((39, heads))), heads).data,
                              M.erpe_attention(x, wq, wk, wv, None, heads).data)


# -- 10 ------------------------------------------------------------------------------------------
@criterion(10, "repeated pipeline runs give byte-identical models and reports")
def test_determinism(tmp_path):
    from test_determinism import pipeline

    for family in FAMILIES:
        root = tmp_path / family
        root.mkdir()
        first = pipeline(root, family)
        for p in (root / "runs").rglob("*"):
            if p.is_file():
                p.unlink()
        second = pipeline(root, family)
        assert first == second
        assert any(k.name == "model.bin" for k in first) and any(k.name == "report.json" for k in first)
