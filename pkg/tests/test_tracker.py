import numpy as np
import pytest

from cfselect.decision_net import net_init
from cfselect.feature import Rect
from cfselect.model_pool import pool_init
from cfselect.sim_env import ScenarioConfig, gen_sequence, generate_tier
from cfselect.tracker import MultiModelTracker, TrackerConfig, normalize_state, track_sequence


@pytest.fixture(scope="module")
def seq():
    return gen_sequence(ScenarioConfig(n_frames=25, occlusion_rate=0.1, scale_rate=0.2, drift_rate=0.1,
                                       seed=9, texture_seed=9))


def test_first_rect_is_initialisation(seq):
    init = Rect(seq.ground_truth[0].x + 1, seq.ground_truth[0].y, seq.ground_truth[0].w, seq.ground_truth[0].h)
    res = track_sequence(seq, init)
    assert res.rects[0] == init and len(res) == len(seq)
    assert res.selected_indices[0] == -1


def test_always_update_selects_accumulated(seq):
    assert set(track_sequence(seq).selected_indices[1:]) == {1}
    assert set(track_sequence(seq, strategy="initial_only").selected_indices[1:]) == {0}


def test_random_update_is_seeded(seq):
    a = track_sequence(seq, strategy="random_update", seed=3).selected_indices
    b = track_sequence(seq, strategy="random_update", seed=3).selected_indices
    assert a == b and set(a[1:]) <= {0, 1, 2}


def test_untrained_decision_reproducible(seq):
    params = net_init(0)
    a = track_sequence(seq, strategy="decision", params=params)
    b = track_sequence(seq, strategy="decision", params=params)
    assert a.selected_indices == b.selected_indices and a.rects == b.rects


def test_strategy_errors(seq):
    with pytest.raises(ValueError):
        track_sequence(seq, strategy="decision")
    with pytest.raises(ValueError):
        track_sequence(seq, strategy="sometimes")
    with pytest.raises(ValueError):
        track_sequence(seq, strategy="decision", params=net_init(0, k=4), cfg=TrackerConfig(k=3))


def test_scale_changes_by_allowed_factors(seq):
    res = track_sequence(seq)
    allowed = (1 / 1.025, 1.0, 1.025)
    for a, b in zip(res.rects, res.rects[1:]):
        fw, fh = b.w / a.w, b.h / a.h
        assert fw == pytest.approx(fh, rel=1e-12)
        assert min(abs(fw - f) for f in allowed) <= 1e-12


def test_static_easy_sequence_tracks_well():
    easy = gen_sequence(ScenarioConfig(n_frames=40, velocity_range=(0.0, 0.0), seed=2, texture_seed=2))
    for strategy in ("always_update", "random_update", "initial_only"):
        assert np.mean(track_sequence(easy, strategy=strategy).ious) >= 0.9


def test_state_normalisation():
    maps = np.stack([np.arange(16.0).reshape(4, 4), np.full((4, 4), 3.0)])
    s = normalize_state(maps)
    assert s[0].min() == 0 and s[0].max() == 1 and np.all(s[1] == 0)


def test_pool_invariants_over_long_sequence():
    long_seq = gen_sequence(ScenarioConfig(n_frames=200, occlusion_rate=0.05, drift_rate=0.05, scale_rate=0.05,
                                           seed=4, texture_seed=4))
    gt0 = long_seq.ground_truth[0]
    cfg = TrackerConfig()
    first = MultiModelTracker(long_seq.frames[0], gt0, cfg).pool.models[0]
    prev = {}

    def check(t, tracker, index):
        models = tracker.pool.models
        assert models[0].same_as(first)
        if prev:
            assert (not models[2].same_as(prev["m2"])) == (index == 2)
        prev["m2"] = models[2]

    res = track_sequence(long_seq, strategy="random_update", seed=11, on_step=check)
    assert res.selected_indices.count(2) > 10


def test_pool_starts_from_frame_zero_features():
    seq0 = gen_sequence(ScenarioConfig(n_frames=2, seed=1, texture_seed=1))
    tr = MultiModelTracker(seq0.frames[0], seq0.ground_truth[0])
    from cfselect.feature import extract_patch, featurize

    ref = pool_init(featurize(extract_patch(seq0.frames[0], seq0.ground_truth[0])), tr.label)
    assert all(a.same_as(b) for a, b in zip(tr.pool.models, ref.models))


def test_all_strategies_close_on_easy_tier():
    easy = generate_tier("easy", 4, seed=5)
    params = net_init(0)
    os06 = []
    for strategy in ("always_update", "random_update", "initial_only", "decision"):
        ious = np.concatenate([track_sequence(s, strategy=strategy, params=params, seed=i).ious[1:]
                               for i, s in enumerate(easy)])
        os06.append(np.mean(ious >= 0.6))
    assert max(os06) - min(os06) <= 0.02
