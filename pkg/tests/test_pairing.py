"""Unit tests for detection records and frame pairing."""

from __future__ import annotations

import numpy as np
import pytest

from stereofish.assignment import WeightMatrix
from stereofish.calibration import compute_rectification
from stereofish.errors import DataError, DimensionMismatch, ZeroVector
from stereofish.pairing import (
    BoundingBox,
    DetectionRecord,
    cosine_similarity,
    pair_frame,
)
from stereofish.synthetic import (
    ScenarioConfig,
    brute_force_assignment,
    generate_scenario,
    make_rig,
)


def _det(det_id, cx, cy, feature, w=40.0, h=20.0):
    return DetectionRecord(
        id=det_id,
        box=BoundingBox(cx - w / 2, cy - h / 2, w, h),
        confidence=0.9,
        feature=np.asarray(feature, dtype=float),
    )


def _identity_rig():
    rig = make_rig(ScenarioConfig())
    return rig, compute_rectification(rig)


class TestCosineSimilarity:
    def test_identical(self):
        v = np.array([0.3, -1.2, 4.0])
        assert cosine_similarity(v, v) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.0)

    def test_scale_invariance(self):
        v = np.array([2.0, -1.0, 0.5])
        assert cosine_similarity(v, 3.0 * v) == pytest.approx(1.0)

    def test_zero_vector(self):
        with pytest.raises(ZeroVector):
            cosine_similarity([0.0, 0.0], [1.0, 0.0])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            cosine_similarity([1.0, 0.0], [1.0, 0.0, 0.0])


class TestDetectionRecord:
    def test_confidence_range(self):
        with pytest.raises(DataError):
            DetectionRecord(
                id=0,
                box=BoundingBox(0, 0, 1, 1),
                confidence=1.5,
                feature=np.ones(3),
            )

    def test_top5_must_be_non_increasing(self):
        with pytest.raises(DataError):
            DetectionRecord(
                id=0,
                box=BoundingBox(0, 0, 1, 1),
                confidence=0.5,
                feature=np.ones(2),
                top5=((1, 0.2), (2, 0.9)),
            )

    def test_box_size_positive(self):
        with pytest.raises(DataError):
            BoundingBox(0, 0, 0, 5)


class TestPairFrame:
    def test_single_pair_same_row(self):
        rig, rect = _identity_rig()
        f = np.array([1.0, 2.0, 3.0])
        res = pair_frame([_det(0, 1200, 400, f)], [_det(0, 800, 400, f)], rig, rect)
        assert len(res.pairs) == 1
        assert res.pairs[0].similarity == pytest.approx(1.0)
        assert res.unpaired_left_ids == ()
        assert res.unpaired_right_ids == ()

    def test_six_pixel_row_gap_blocks(self):
        rig, rect = _identity_rig()
        f = np.array([1.0, 2.0, 3.0])
        res = pair_frame([_det(0, 1200, 400, f)], [_det(0, 800, 406, f)], rig, rect)
        assert res.pairs == ()
        assert res.unpaired_left_ids == (0,)
        assert res.unpaired_right_ids == (0,)

    def test_boundary_five_pixels_allowed(self):
        rig, rect = _identity_rig()
        f = np.array([1.0, 0.0])
        res = pair_frame([_det(0, 1200, 400, f)], [_det(0, 800, 405, f)], rig, rect)
        assert len(res.pairs) == 1

    def test_negative_disparity_blocked(self):
        rig, rect = _identity_rig()
        f = np.array([1.0, 0.0])
        res = pair_frame([_det(0, 800, 400, f)], [_det(0, 1200, 400, f)], rig, rect)
        assert res.pairs == ()

    def test_zero_feature_flagged_not_fatal(self):
        rig, rect = _identity_rig()
        f = np.array([1.0, 0.0])
        res = pair_frame(
            [_det(0, 1200, 400, [0.0, 0.0]), _det(1, 1300, 500, f)],
            [_det(0, 900, 500, f)],
            rig,
            rect,
        )
        assert res.zero_feature_left_ids == (0,)
        assert [p.left.id for p in res.pairs] == [1]
        assert 0 in res.unpaired_left_ids

    def test_matches_ground_truth_and_oracle(self):
        """Synthetic frames: pairing equals identity truth and the oracle."""
        total = correct = 0
        for seed in range(30):
            cfg = ScenarioConfig(
                n_fish=4, n_frames=1, seed=seed, with_masks=False, feature_noise=0.02
            )
            sc = generate_scenario(cfg)
            ft = sc.frames[0]
            res = pair_frame(
                ft.left_detections, ft.right_detections, sc.rig, sc.rect
            )
            got = {(p.left.id, p.right.id) for p in res.pairs}
            want = {(l, r) for l, r, _ in ft.gt_pairs}
            total += len(want)
            correct += len(got & want)

            # oracle comparison on the same weight structure
            lefts, rights = ft.left_detections, ft.right_detections
            weights = np.zeros((len(lefts), len(rights)))
            forbidden = np.ones_like(weights, dtype=bool)
            for i, dl in enumerate(lefts):
                cl = dl.box.center()
                for j, dr in enumerate(rights):
                    cr = dr.box.center()
                    if abs(cl.v - cr.v) <= 5.0 and cl.u >= cr.u:
                        weights[i, j] = cosine_similarity(dl.feature, dr.feature)
                        forbidden[i, j] = False
            oracle = brute_force_assignment(
                WeightMatrix(len(lefts), len(rights), weights, forbidden)
            )
            oracle_ids = {(lefts[i].id, rights[j].id) for i, j in oracle.pairs}
            assert got == oracle_ids
        assert correct == total

    def test_one_to_one_and_gate_on_random_frames(self):
        rig, rect = _identity_rig()
        rng = np.random.default_rng(77)
        for _ in range(200):
            nl, nr = rng.integers(0, 6, 2)
            lefts = [
                _det(i, rng.uniform(600, 1800), rng.uniform(50, 1030),
                     rng.normal(size=8))
                for i in range(nl)
            ]
            rights = [
                _det(j, rng.uniform(100, 1300), rng.uniform(50, 1030),
                     rng.normal(size=8))
                for j in range(nr)
            ]
            res = pair_frame(lefts, rights, rig, rect)
            seen_l = [p.left.id for p in res.pairs]
            seen_r = [p.right.id for p in res.pairs]
            assert len(seen_l) == len(set(seen_l))
            assert len(seen_r) == len(set(seen_r))
            for p in res.pairs:
                cl, cr = p.left.box.center(), p.right.box.center()
                assert abs(cl.v - cr.v) <= 5.0
                assert cl.u >= cr.u

    def test_feature_rescaling_invariance(self):
        rig, rect = _identity_rig()
        rng = np.random.default_rng(79)
        lefts = [_det(i, 1200 + 40 * i, 300 + 30 * i, rng.normal(size=6)) for i in range(3)]
        rights = [_det(j, 700 + 45 * j, 300 + 30 * j, rng.normal(size=6)) for j in range(3)]
        base = pair_frame(lefts, rights, rig, rect)
        scaled = [
            DetectionRecord(d.id, d.box, d.confidence, d.feature * s, d.top5)
            for d, s in zip(lefts, (2.0, 17.0, 0.3))
        ]
        res = pair_frame(scaled, rights, rig, rect)
        assert {(p.left.id, p.right.id) for p in res.pairs} == {
            (p.left.id, p.right.id) for p in base.pairs
        }

    def test_swapped_roles_transpose(self):
        rig, rect = _identity_rig()
        rng = np.random.default_rng(83)
        lefts = [_det(i, rng.uniform(900, 1500), 400 + 2 * i, rng.normal(size=5)) for i in range(4)]
        rights = [_det(j, rng.uniform(400, 900), 400 + 2 * j, rng.normal(size=5)) for j in range(4)]
        fwd = pair_frame(lefts, rights, rig, rect, require_nonnegative_disparity=False)
        rev = pair_frame(rights, lefts, rig, rect, require_nonnegative_disparity=False)
        assert {(p.left.id, p.right.id) for p in fwd.pairs} == {
            (p.right.id, p.left.id) for p in rev.pairs
        }
