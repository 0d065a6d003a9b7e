import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from auwgcn import reference as ref
from auwgcn.au_prior import (
    AuRoiMap,
    build_adjacency,
    count_cooccurrence,
    default_au_roi_map,
    normalize,
    uniform_adjacency,
)
from auwgcn.feature_io import AnnotationInstance

AUS = [f"AU{i}" for i in (1, 2, 4, 6, 7, 9, 10, 12, 14, 15, 17)]


def inst(*aus, kind="micro"):
    return AnnotationInstance(0, 0, 0, kind, frozenset(aus))


au_sets = st.lists(st.sets(st.sampled_from(AUS), max_size=4), max_size=30)


def test_empty_annotations_give_zero_counts():
    assert not count_cooccurrence([], default_au_roi_map()).any()


def test_single_instance_expansion():
    m = AuRoiMap({"AU99": {3, 4}})
    raw = count_cooccurrence([inst("AU99")], m)
    expected = np.zeros((12, 12), dtype=int)
    expected[np.ix_([3, 4], [3, 4])] = 1
    assert np.array_equal(raw, expected)


def test_ordered_pairs_counted_both_ways():
    m = AuRoiMap({"AU1": {0}, "AU2": {5}})
    raw = count_cooccurrence([inst("AU1", "AU2")], m)
    assert raw[0, 5] == raw[5, 0] == 1
    assert raw[0, 0] == raw[5, 5] == 1


def test_side_coded_au_uses_stem():
    m = default_au_roi_map()
    assert np.array_equal(count_cooccurrence([inst("AU12R")], m), count_cooccurrence([inst("AU12")], m))


def test_unknown_au_warns_and_is_skipped(caplog):
    with caplog.at_level(logging.WARNING):
        raw = count_cooccurrence([inst("AU43", "AU4")], default_au_roi_map())
    assert "AU43" in caplog.text
    assert np.array_equal(raw, count_cooccurrence([inst("AU4")], default_au_roi_map()))


@settings(max_examples=50, deadline=None)
@given(au_sets, st.integers(0, 2**32 - 1))
def test_counts_match_triple_loop(sets, seed):
    rng = np.random.default_rng(seed)
    m = AuRoiMap({au: set(rng.choice(12, size=int(rng.integers(1, 4)), replace=False).tolist()) for au in AUS})
    anns = [inst(*s) for s in sets]
    assert np.array_equal(count_cooccurrence(anns, m), ref.cooccurrence(anns, m.rois))


@settings(max_examples=30, deadline=None)
@given(au_sets, st.randoms(use_true_random=False))
def test_counts_permutation_invariant_and_monotone(sets, rnd):
    m = default_au_roi_map()
    anns = [inst(*s) for s in sets]
    raw = count_cooccurrence(anns, m)
    shuffled = anns[:]
    rnd.shuffle(shuffled)
    assert np.array_equal(raw, count_cooccurrence(shuffled, m))
    grown = count_cooccurrence(anns + [inst("AU1", "AU12")], m)
    assert np.all(grown >= raw)
    assert np.array_equal(raw, raw.T)


def test_normalize_zero_is_identity():
    assert np.allclose(normalize(np.zeros((12, 12))), np.eye(12))


def test_normalize_all_ones_hand_values():
    # A' + I = J + I has every degree 13
    a = normalize(np.ones((12, 12)))
    assert np.allclose(np.diag(a), 2 / 13)
    assert np.allclose(a[~np.eye(12, dtype=bool)], 1 / 13)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_normalize_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    raw = rng.integers(0, 20, size=(12, 12))
    raw = raw + raw.T
    a = normalize(raw)
    assert np.array_equal(a, a.T)
    assert np.all(np.isfinite(a))
    assert ref.spectral_radius(a) <= 1 + 1e-6


def test_normalize_rejects_wrong_shape():
    with pytest.raises(ValueError):
        normalize(np.zeros((11, 11)))


def test_uniform_adjacency_has_unit_radius():
    u = uniform_adjacency()
    assert np.allclose(u, 1 / 12)
    assert ref.spectral_radius(u) == pytest.approx(1.0)


def test_default_map_contents():
    m = default_au_roi_map()
    assert all(m.entries[au] for au in m.entries)
    assert m.rois("AU4") == frozenset({0, 1, 4})
    upper = set(range(5))
    for au in ("AU1", "AU2", "AU4"):
        assert m.rois(au) <= upper
    for au in ("AU12", "AU14", "AU15"):
        assert m.rois(au) <= {10, 11}


def test_map_text_round_trip(tmp_path):
    m = default_au_roi_map()
    path = tmp_path / "map.txt"
    m.save(path)
    assert AuRoiMap.load(path) == m
    assert AuRoiMap.from_text("# comment\nau6: 5, 6  # cheeks\n").rois("AU6") == {5, 6}


@pytest.mark.parametrize("text", ["AU1 0,1\n", "AU1: x\n", "AU1: 12\n", "AU1:\n"])
def test_map_parse_errors(text):
    with pytest.raises(ValueError):
        AuRoiMap.from_text(text)


def test_build_adjacency_pairs_raw_and_normalized():
    adj = build_adjacency([inst("AU6", "AU12"), inst("AU4")])
    assert adj.raw[5, 10] == 1
    assert np.allclose(adj.normalized, normalize(adj.raw))
