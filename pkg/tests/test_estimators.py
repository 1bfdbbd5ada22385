import math

import numpy as np
import pytest

from mosaikit import cda
from mosaikit import homography as hg
from mosaikit.errors import DegenerateInput, InsufficientFeatures, MalformedFile, MissingPrediction
from mosaikit.estimators import (
    DirectEstimator,
    EstimatorRequest,
    FeatureEstimator,
    FileEstimator,
    PredictionTable,
    estimate_direct,
    estimate_feature,
    estimate_from_file,
    fit_similarity,
    patch_h_to_fp,
    write_requests,
)
from mosaikit.metrics import corner_rmse


def pair(frame, motion, seed=0, **cfg):
    c = cda.CdaConfig(**cfg)
    p = cda.generate_pair(frame, c, cda.pair_rng(seed, 0), motion=motion)
    return p, EstimatorRequest(p.patch_a, p.patch_b, p.anchor)


def test_identical_patches_direct(vessel):
    p, req = pair(vessel[:256, :256], (0.0, 0.0, 0.0))
    res = estimate_direct(req)
    assert res.converged
    assert np.abs(res.fp).max() < 1e-4
    assert abs(res.motion.beta) < 1e-4


def test_direct_recovers_cda_motion(vessel):
    p, req = pair(vessel[:256, :256], (math.radians(2), 5.0, -3.0), seed=3)
    res = DirectEstimator().estimate(req)
    assert res.converged
    assert abs(math.degrees(res.motion.beta) - 2.0) < 0.1
    assert abs(res.motion.d_x - 5) < 0.25 and abs(res.motion.d_y + 3) < 0.25
    assert corner_rmse(res.fp, p.gt) < 0.05


def test_direct_translation_on_ramp(ramp_noise):
    p, req = pair(ramp_noise[:256, :256], (0.0, 10.0, 0.0), seed=1)
    res = estimate_direct(req)
    assert abs(res.motion.d_x - 10) < 0.25
    assert abs(res.motion.beta) < math.radians(0.1)


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("shift", [40.0, -45.0, 55.0])
def test_direct_out_of_range_not_silently_wrong(vessel, shift, seed):
    frame = vessel[:384, :384]
    p, req = pair(frame, (0.0, shift, 0.0), seed=seed, margin=60, shift_max=46)
    res = estimate_direct(req)
    err = corner_rmse(res.fp, p.gt)
    spread = np.mean(np.abs(p.patch_b - p.patch_b.mean()))
    assert not (res.converged and err > 1.0)
    if err > 1.0:
        assert not res.converged or res.residual > 0.5 * spread


def test_direct_degenerate_input():
    req = EstimatorRequest(np.full((128, 128), 90.0), np.full((128, 128), 90.0), hg.square_quad(0, 0, 128))
    with pytest.raises(DegenerateInput):
        estimate_direct(req)


def test_direct_is_deterministic(vessel):
    _, req = pair(vessel[:256, :256], (0.03, 2.0, 1.0), seed=4)
    a, b = estimate_direct(req), estimate_direct(req)
    np.testing.assert_array_equal(a.fp, b.fp)


def test_feature_zero_motion(checker):
    p, req = pair(checker[:256, :256], (0.0, 0.0, 0.0))
    res = estimate_feature(req)
    assert np.abs(res.fp).max() < 0.5


def test_feature_recovers_cda_motion(checker):
    p, req = pair(checker[:256, :256], (math.radians(3), 8.0, 2.0), seed=6)
    res = FeatureEstimator(seed=1).estimate(req)
    assert np.linalg.norm(res.fp - p.gt, axis=1).max() < 0.5


def test_feature_blank_patch():
    req = EstimatorRequest(np.full((128, 128), 7.0), np.full((128, 128), 7.0), hg.square_quad(0, 0, 128))
    with pytest.raises(InsufficientFeatures):
        estimate_feature(req)


def test_feature_seeded_per_request(vessel):
    _, req = pair(vessel[:256, :256], (0.02, 3.0, -1.0), seed=7)
    a = FeatureEstimator(seed=3).estimate(req)
    b = FeatureEstimator(seed=3).estimate(req)
    np.testing.assert_array_equal(a.fp, b.fp)


def test_fit_similarity_exact(rng):
    src = rng.uniform(0, 100, (10, 2))
    h = np.eye(3)
    h[:2, :2] = 1.1 * hg.rotation(0.2)
    h[:2, 2] = (3, -4)
    np.testing.assert_allclose(fit_similarity(src, hg.warp_points(h, src)), h, atol=1e-9)


def test_patch_h_to_fp_translation():
    anchor = hg.square_quad(30, 40, 128)
    np.testing.assert_allclose(patch_h_to_fp(hg.translation(2, 1), anchor, 128), np.tile([2.0, 1.0], (4, 1)), atol=1e-9)


# --- prediction files ------------------------------------------------------------


def test_file_estimator_rows(tmp_path):
    anchor = hg.square_quad(10, 12, 128)
    table = PredictionTable({(0, 0): (anchor, np.zeros((4, 2)))})
    req = EstimatorRequest(np.zeros((128, 128)), np.zeros((128, 128)), anchor, 0, 0)
    np.testing.assert_array_equal(estimate_from_file(req, table).fp, 0)
    with pytest.raises(MissingPrediction, match=r"k=0, n=1"):
        estimate_from_file(EstimatorRequest(req.patch_a, req.patch_b, anchor, 0, 1), table)
    with pytest.raises(MissingPrediction):
        estimate_from_file(EstimatorRequest(req.patch_a, req.patch_b, anchor + 3, 0, 0), table)


def test_prediction_table_roundtrip(tmp_path, rng):
    rows = {}
    for k in range(3):
        for n in range(4):
            rows[(k, n)] = (hg.square_quad(*rng.integers(0, 60, 2), 128), rng.normal(0, 3, (4, 2)))
    p = tmp_path / "preds.csv"
    PredictionTable(rows).write(p)
    est = FileEstimator.from_path(p)
    for (k, n), (anchor, fp) in rows.items():
        req = EstimatorRequest(np.zeros((2, 2)), np.zeros((2, 2)), anchor, k, n)
        np.testing.assert_array_equal(est.estimate(req).fp, fp)


def test_request_file_is_not_a_prediction_file(tmp_path):
    p = tmp_path / "req.csv"
    write_requests(p, [(0, 0, hg.square_quad(0, 0, 128))])
    with pytest.raises(MalformedFile):
        PredictionTable.read(p)
