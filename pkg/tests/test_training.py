import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from auwgcn import model as M
from auwgcn import numerics as nx
from auwgcn.feature_io import AnnotationInstance, Dataset, FeatureSequence
from auwgcn.synthdata import SynthConfig, generate_dataset
from auwgcn.training import (
    KindTargets,
    TrainConfig,
    encode_labels,
    focal_loss,
    fold_adjacency,
    loso,
    make_windows,
    train_fold,
    video_samples,
    window_starts,
)

TINY_MODEL = M.ModelConfig(gcn_hidden=4, neck_channels=(8, 8))


def video(t, fps=30.0, vid="v", subject="s"):
    return FeatureSequence(vid, subject, fps, np.zeros((t, 12, 2), dtype=np.float32))


def tiny_dataset(subjects=3, seed=0):
    cfg = SynthConfig(subjects=subjects, videos_per_subject=1, video_seconds=12, macro_rate=1, micro_rate=1, seed=seed)
    return generate_dataset(cfg)


def test_window_starts_example():
    assert window_starts(100, 64, 32) == [0, 32, 64]
    assert window_starts(64, 64, 32) == [0]


def test_make_windows_pads_and_masks():
    cfg = TrainConfig(window_seconds=64 / 30)
    wins = make_windows(video(100), cfg)
    assert [w.window_start for w in wins] == [0, 32, 64]
    assert wins[-1].mask.sum() == 36 and not wins[-1].feats[36:].any()
    assert len(make_windows(video(64), cfg)) == 1


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 400), st.floats(0.4, 3.0), st.floats(0.1, 1.0))
def test_windows_cover_every_frame(t, seconds, frac):
    cfg = TrainConfig(window_seconds=seconds, window_stride_fraction=frac)
    covered = np.zeros(t, dtype=int)
    for w in make_windows(video(t), cfg):
        covered[w.window_start : w.window_start + int(w.mask.sum())] += 1
    assert covered.min() >= 1


def test_window_shorter_than_receptive_field_rejected():
    with pytest.raises(ValueError):
        TrainConfig(window_seconds=0.3).window_length(30)


def test_encode_labels_direct_example():
    tg = encode_labels([AnnotationInstance(10, 14, 19, "macro")], 0, 64, 0)
    cls = tg["macro"].cls
    assert cls[10] == M.ONSET and cls[14] == M.APEX and cls[19] == M.OFFSET
    assert (cls == M.BACKGROUND).sum() == 61
    assert np.flatnonzero(tg["macro"].exp).tolist() == list(range(10, 20))
    assert not tg["micro"].exp.any() and (tg["micro"].cls == M.BACKGROUND).all()


def test_encode_labels_outside_window_and_global_indices():
    a = AnnotationInstance(10, 14, 19, "micro")
    assert not encode_labels([a], 30, 20, 1)["micro"].exp.any()
    tg = encode_labels([a], 8, 10, 0)["micro"]
    assert tg.cls[2] == M.ONSET and tg.cls[6] == M.APEX
    assert tg.exp.tolist() == [0, 0] + [1] * 8


def test_encode_labels_priority_and_fraction():
    # radius 2 makes apex (12) and onset (10) regions overlap; apex wins
    cls = encode_labels([AnnotationInstance(10, 12, 19, "macro")], 0, 30, 2)["macro"].cls
    assert cls[8:15].tolist() == [M.ONSET, M.ONSET, M.APEX, M.APEX, M.APEX, M.APEX, M.APEX]
    # a 0.2 fraction of a 40-frame instance widens the radius to 8
    cls = encode_labels([AnnotationInstance(20, 40, 59, "macro")], 0, 80, 0, 0.2)["macro"].cls
    assert np.flatnonzero(cls == M.APEX).tolist() == list(range(32, 49))


def test_encode_labels_rejects_overlap():
    insts = [AnnotationInstance(0, 2, 5, "micro"), AnnotationInstance(5, 6, 8, "micro")]
    with pytest.raises(ValueError):
        encode_labels(insts, 0, 20, 0)


def test_labels_cover_every_instance_frame():
    ds = tiny_dataset()
    cfg = TrainConfig()
    for v in ds.videos:
        anns = ds.annotations_for(v.video_id)
        for kind in ("macro", "micro"):
            hit = np.zeros(v.n_frames, dtype=bool)
            for w in video_samples(v, anns, cfg):
                n = int(w.mask.sum())
                hit[w.window_start : w.window_start + n] |= w.targets[kind].exp[:n] == 1
            for a in anns:
                if a.kind == kind:
                    assert hit[a.onset : a.offset + 1].all()
            for w in video_samples(v, anns, cfg):
                for t in np.flatnonzero(w.targets[kind].cls != M.BACKGROUND):
                    g = w.window_start + t
                    assert any(a.kind == kind and a.onset - 1 <= g <= a.offset + 1 for a in anns)


def targets_from(exp, cls):
    return {k: KindTargets(np.asarray(exp, dtype=np.int8), np.asarray(cls, dtype=np.int8)) for k in ("macro", "micro")}


def test_focal_gamma_zero_is_scaled_cross_entropy():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(10, 7))
    y = rng.integers(0, 2, size=7)
    c = rng.integers(0, 4, size=7)
    loss, _ = focal_loss(z, targets_from(y, c), alpha=0.5, gamma=0.0)
    expected = 0.0
    for o in (0, 5):
        p = nx.sigmoid(z[o])
        expected += 0.5 * np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p)))
        q = nx.softmax(z[o + 1 : o + 5], axis=0)
        expected += 0.5 * np.mean(-np.log(q[c, np.arange(7)]))
    assert loss == pytest.approx(expected, rel=1e-12)


def test_focal_near_zero_at_perfect_prediction():
    y = np.array([1, 0, 1, 0])
    c = np.array([0, 3, 1, 2])
    z = np.zeros((10, 4))
    for o in (0, 5):
        z[o] = np.where(y == 1, 40.0, -40.0)
        z[o + 1 + c, np.arange(4)] = 40.0
    loss, grad = focal_loss(z, targets_from(y, c))
    assert 0 <= loss <= 1e-5
    assert np.all(np.isfinite(grad))


def test_focal_mask_excludes_padding():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(10, 6))
    tg = targets_from([1, 0, 1, 0, 1, 1], [0, 1, 2, 3, 3, 3])
    mask = np.array([1, 1, 1, 1, 0, 0], dtype=bool)
    loss, grad = focal_loss(z, tg, mask)
    z2 = z.copy()
    z2[:, 4:] = rng.normal(size=(10, 2)) * 10
    assert focal_loss(z2, tg, mask)[0] == pytest.approx(loss)
    assert not grad[:, 4:].any()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 1.0, 2.0]), st.floats(0.1, 0.9))
def test_focal_gradient_finite_differences(seed, gamma, alpha):
    rng = np.random.default_rng(seed)
    t = int(rng.integers(1, 8))
    z = nx.Parameter(rng.normal(scale=2.0, size=(10, t)))
    tg = targets_from(rng.integers(0, 2, size=t), rng.integers(0, 4, size=t))
    _, z.grad[...] = focal_loss(z.value, tg, alpha=alpha, gamma=gamma)
    err = nx.finite_diff_check(lambda: focal_loss(z.value, tg, alpha=alpha, gamma=gamma)[0], [z], eps=1e-6)
    assert err <= 1e-3


@given(st.floats(-8, 8), st.floats(0.05, 2.0))
def test_focal_nonnegative_and_decreasing_at_positives(z0, dz):
    # raise the logit of the expression channel and of the target class together
    tg = targets_from([1], [1])
    rows = [0, 2, 5, 7]

    def at(v):
        z = np.zeros((10, 1))
        z[rows] = v
        return focal_loss(z, tg)[0]

    assert at(z0) >= 0
    assert at(z0 + dz) < at(z0)


def test_fold_adjacency_uses_training_subjects_only():
    frames = np.zeros((40, 12, 2), dtype=np.float32)
    vids = [FeatureSequence(f"s{i}_v", f"s{i}", 30.0, frames) for i in range(3)]
    anns = {
        "s0_v": [AnnotationInstance(2, 4, 8, "micro", frozenset({"AU12"}))],
        "s1_v": [AnnotationInstance(2, 4, 8, "micro", frozenset({"AU4"}))],
        "s2_v": [AnnotationInstance(2, 4, 8, "micro", frozenset({"AU4"}))],
    }
    ds = Dataset(vids, anns)
    cfg = TrainConfig()
    with_s0 = fold_adjacency(ds, "s1", cfg)
    without_s0 = fold_adjacency(ds, "s0", cfg)
    assert with_s0[10, 11] > 0 and without_s0[10, 11] == 0
    assert np.allclose(fold_adjacency(ds, "s0", TrainConfig(adjacency="uniform")), 1 / 12)


def test_held_out_windows_never_trained_on():
    ds = tiny_dataset()
    seen = set()
    train_fold(ds, "s02", TrainConfig(epochs=1), TINY_MODEL, observer=lambda s: seen.add(s.video_id))
    held = {v.video_id for v in ds.videos_of("s02")}
    assert seen and not seen & held
    assert seen == {v.video_id for v in ds.videos} - held


def test_train_fold_errors():
    ds = tiny_dataset()
    with pytest.raises(ValueError):
        train_fold(ds, "nobody", TrainConfig(epochs=1), TINY_MODEL)
    one = tiny_dataset(subjects=1)
    with pytest.raises(ValueError):
        train_fold(one, "s01", TrainConfig(epochs=1), TINY_MODEL)
    with pytest.raises(ValueError):
        loso(one, TrainConfig(epochs=1), TINY_MODEL)


def test_train_fold_bitwise_deterministic():
    ds = tiny_dataset()
    cfg = TrainConfig(epochs=2, lr=1e-3)
    a = train_fold(ds, "s01", cfg, TINY_MODEL)
    b = train_fold(ds, "s01", cfg, TINY_MODEL)
    assert M.params_equal(a.checkpoint.params, b.checkpoint.params)
    assert a.step_losses.tobytes() == b.step_losses.tobytes()


def test_loso_keys_are_subjects():
    ds = tiny_dataset()
    folds = loso(ds, TrainConfig(epochs=1), TINY_MODEL)
    assert sorted(folds) == ["s01", "s02", "s03"]
    assert all(f.checkpoint.meta["held_out"] == s for s, f in folds.items())


def test_training_halves_the_loss():
    ds = tiny_dataset()
    res = train_fold(ds, "s01", TrainConfig(epochs=15, lr=1e-3, boundary_radius_fraction=0.2), M.ModelConfig())
    assert res.final_loss <= 0.5 * res.initial_loss
