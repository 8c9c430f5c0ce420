"""Overlap metrics, exact Hausdorff distance, similarity matrices."""

import numpy as np
import pytest

from volprop.errors import BothEmpty, DimensionMismatch, EitherEmpty, ZeroVector
from volprop.metrics import (
    MetricsRecord,
    aggregate,
    cosine_similarity_matrix,
    dice,
    hausdorff_mm,
    iou,
    surface_voxels,
)


def _hausdorff_oracle(P, G, spacing):
    # all-pairs definition over every foreground voxel center
    sp = np.asarray(spacing, dtype=np.float64)
    A = np.argwhere(P.astype(bool)).astype(np.float64) * sp
    B = np.argwhere(G.astype(bool)).astype(np.float64) * sp
    d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)
    d = np.sqrt(d2)
    return max(d.min(axis=1).max(), d.min(axis=0).max())


def _rand_mask(rng, shape=(10, 10, 10), p=0.1):
    m = rng.random(shape) < p
    if not m.any():
        m[tuple(rng.integers(0, s) for s in shape)] = True
    return m


# --- dice / iou ---

def test_dice_golden():
    P = np.zeros((1, 1, 4), dtype=np.uint8)
    G = np.zeros((1, 1, 4), dtype=np.uint8)
    P[0, 0, :2] = 1
    G[0, 0, 1:3] = 1
    assert dice(P, G) == pytest.approx(2 * 1 / 4)
    assert iou(P, G) == pytest.approx(1 / 3)


def test_dice_iou_identity():
    rng = np.random.default_rng(0)
    m = _rand_mask(rng)
    assert dice(m, m) == 1.0
    assert iou(m, m) == 1.0


def test_dice_iou_disjoint():
    P = np.zeros((2, 2, 2), dtype=bool)
    G = np.zeros((2, 2, 2), dtype=bool)
    P[0, 0, 0] = True
    G[1, 1, 1] = True
    assert dice(P, G) == 0.0
    assert iou(P, G) == 0.0


def test_dice_iou_relation():
    # d = 2j / (1 + j) for any pair of masks
    rng = np.random.default_rng(1)
    for _ in range(20):
        P, G = _rand_mask(rng), _rand_mask(rng)
        j = iou(P, G)
        assert dice(P, G) == pytest.approx(2 * j / (1 + j))


def test_dice_iou_both_empty():
    z = np.zeros((3, 3, 3), dtype=bool)
    with pytest.raises(BothEmpty):
        dice(z, z)
    with pytest.raises(BothEmpty):
        iou(z, z)


def test_dice_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        dice(np.zeros((2, 2, 2)), np.zeros((3, 3, 3)))


# --- surface extraction ---

def test_surface_of_solid_cube():
    m = np.zeros((7, 7, 7), dtype=bool)
    m[1:6, 1:6, 1:6] = True
    s = surface_voxels(m)
    interior = np.zeros_like(m)
    interior[2:5, 2:5, 2:5] = True
    assert np.array_equal(s, m & ~interior)


def test_surface_touching_border_counts_as_surface():
    m = np.ones((3, 3, 3), dtype=bool)
    s = surface_voxels(m)
    assert s.sum() == 26  # all but the center voxel
    assert not s[1, 1, 1]


def test_surface_of_single_voxel():
    m = np.zeros((3, 3, 3), dtype=bool)
    m[1, 1, 1] = True
    assert np.array_equal(surface_voxels(m), m)


# --- hausdorff ---

def test_hausdorff_golden_3_4_5():
    P = np.zeros((5, 5, 5), dtype=bool)
    G = np.zeros((5, 5, 5), dtype=bool)
    P[0, 0, 0] = True
    G[3, 4, 0] = True
    assert hausdorff_mm(P, G) == 5.0


def test_hausdorff_identity_is_zero():
    rng = np.random.default_rng(2)
    m = _rand_mask(rng)
    assert hausdorff_mm(m, m) == 0.0


def test_hausdorff_symmetry():
    rng = np.random.default_rng(3)
    for _ in range(10):
        P, G = _rand_mask(rng), _rand_mask(rng)
        assert hausdorff_mm(P, G) == hausdorff_mm(G, P)


def test_hausdorff_anisotropic_golden():
    P = np.zeros((3, 3, 3), dtype=bool)
    G = np.zeros((3, 3, 3), dtype=bool)
    P[0, 0, 0] = True
    G[1, 2, 1] = True
    # offsets (1, 2, 1) at spacing (1, 1, 3) -> sqrt(1 + 4 + 9)
    assert hausdorff_mm(P, G, spacing=(1.0, 1.0, 3.0)) == pytest.approx(np.sqrt(14.0))


def test_hausdorff_matches_all_pairs_oracle():
    rng = np.random.default_rng(4)
    for _ in range(30):
        P = _rand_mask(rng, shape=(8, 9, 7), p=0.08)
        G = _rand_mask(rng, shape=(8, 9, 7), p=0.08)
        spacing = tuple(rng.uniform(0.5, 3.0, size=3))
        assert hausdorff_mm(P, G, spacing) == _hausdorff_oracle(P, G, spacing)


def test_hausdorff_triangle_inequality():
    rng = np.random.default_rng(5)
    for _ in range(10):
        A, B, C = (_rand_mask(rng, shape=(7, 7, 7)) for _ in range(3))
        ab = hausdorff_mm(A, B)
        bc = hausdorff_mm(B, C)
        ac = hausdorff_mm(A, C)
        assert ac <= ab + bc + 1e-9


def test_hausdorff_either_empty():
    z = np.zeros((3, 3, 3), dtype=bool)
    m = z.copy()
    m[1, 1, 1] = True
    with pytest.raises(EitherEmpty):
        hausdorff_mm(z, m)
    with pytest.raises(EitherEmpty):
        hausdorff_mm(m, z)


def test_hausdorff_percentile():
    rng = np.random.default_rng(6)
    P, G = _rand_mask(rng), _rand_mask(rng)
    h100 = hausdorff_mm(P, G, percentile=100.0)
    hmax = hausdorff_mm(P, G)
    assert h100 == pytest.approx(hmax)
    h95 = hausdorff_mm(P, G, percentile=95.0)
    assert h95 <= hmax + 1e-12


def test_hausdorff_percentile_matches_pooled_brute():
    rng = np.random.default_rng(7)
    P = _rand_mask(rng, shape=(6, 6, 6), p=0.15)
    G = _rand_mask(rng, shape=(6, 6, 6), p=0.15)
    sp = (1.0, 1.0, 1.0)
    A = np.argwhere(P).astype(float)
    B = np.argwhere(G).astype(float)
    d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)
    d = np.sqrt(d2)
    pooled = np.concatenate([d.min(axis=1), d.min(axis=0)])
    assert hausdorff_mm(P, G, sp, percentile=50.0) == pytest.approx(
        np.percentile(pooled, 50.0))


# --- cosine similarity ---

def test_cosine_goldens():
    vecs = [np.array([1.0, 0.0]), np.array([0.0, 2.0]), np.array([-3.0, 0.0])]
    m = cosine_similarity_matrix(vecs)
    assert m[0, 1] == pytest.approx(0.0)
    assert m[0, 2] == pytest.approx(-1.0)
    assert np.allclose(np.diag(m), 1.0)
    assert np.allclose(m, m.T)


def test_cosine_matches_double_loop():
    rng = np.random.default_rng(8)
    vecs = [rng.normal(size=16) for _ in range(6)]
    m = cosine_similarity_matrix(vecs)
    for i in range(6):
        for j in range(6):
            expect = vecs[i] @ vecs[j] / (np.linalg.norm(vecs[i]) * np.linalg.norm(vecs[j]))
            assert m[i, j] == pytest.approx(expect, abs=1e-9)


def test_cosine_zero_vector():
    with pytest.raises(ZeroVector):
        cosine_similarity_matrix([np.array([1.0, 0.0]), np.array([0.0, 0.0])])


def test_cosine_values_clipped_to_unit_interval():
    rng = np.random.default_rng(9)
    m = cosine_similarity_matrix([rng.normal(size=4) for _ in range(5)])
    assert m.min() >= -1.0 and m.max() <= 1.0


# --- aggregation ---

def _rec(structure, d, i=0.5, hd=1.0):
    return MetricsRecord(structure=structure, dice=d, iou=i, hausdorff_mm=hd)


def test_aggregate_golden():
    out = aggregate([_rec("liver", 0.8, hd=2.0), _rec("liver", 0.6, hd=4.0),
                     _rec("spleen", 1.0, hd=0.0)])
    liver = out["classes"]["liver"]
    assert liver["n"] == 2
    assert liver["dice_mean"] == pytest.approx(0.7)
    assert liver["dice_std"] == pytest.approx(0.1)  # population std
    assert liver["hd_mm_mean"] == pytest.approx(3.0)
    assert out["overall"]["n"] == 3
    assert out["overall"]["dice_mean"] == pytest.approx(0.8)
    assert list(out["classes"]) == ["liver", "spleen"]


def test_aggregate_hd_exclusion():
    out = aggregate([_rec("a", 0.5, hd=2.0), MetricsRecord("a", 0.5, 0.4, None)])
    assert out["classes"]["a"]["hd_excluded"] == 1
    assert out["classes"]["a"]["hd_mm_mean"] == pytest.approx(2.0)
    only_none = aggregate([MetricsRecord("a", 0.5, 0.4, None)])
    assert only_none["classes"]["a"]["hd_mm_mean"] is None


def test_aggregate_empty():
    assert aggregate([]) == {"classes": {}, "overall": None}
