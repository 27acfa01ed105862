#!/usr/bin/env python3
"""
Тесты геометрической проверки: аффинная модель, RANSAC, ранжирование
"""

import math
import unittest

import numpy as np

from errors import DegenerateSampleError, InvalidInputError
from matcher import (AffineModel, Correspondence, RansacParams, estimate_affine, fit_affine_least_squares,
                     rank_results, ransac_verify)
from synth import gen_geometry_pair

TRUE_MODEL = AffineModel(1.1 * math.cos(0.3), -1.1 * math.sin(0.3), 1.1 * math.sin(0.3), 1.1 * math.cos(0.3),
                         25.0, -40.0)


class TestAffineModel(unittest.TestCase):
    """Тесты оценки аффинной модели"""

    def test_exact_from_three_points(self):
        query = [(0.0, 0.0), (100.0, 0.0), (0.0, 100.0)]
        db = TRUE_MODEL.apply(query)
        model = estimate_affine([Correspondence(q, tuple(d)) for q, d in zip(query, db)])
        np.testing.assert_allclose(model.matrix, TRUE_MODEL.matrix, atol=1e-9)
        np.testing.assert_allclose(model.translation, TRUE_MODEL.translation, atol=1e-9)

    def test_collinear_sample(self):
        sample = [Correspondence((i, 2 * i), (i, i)) for i in range(3)]
        with self.assertRaises(DegenerateSampleError):
            estimate_affine(sample)

    def test_degenerate_target(self):
        sample = [Correspondence((0, 0), (5, 5)), Correspondence((1, 0), (5, 5)), Correspondence((0, 1), (5, 5))]
        with self.assertRaises(DegenerateSampleError):
            estimate_affine(sample)

    def test_sample_size(self):
        with self.assertRaises(InvalidInputError):
            estimate_affine([Correspondence((0, 0), (0, 0))] * 2)

    def test_least_squares_on_clean_points(self):
        rng = np.random.default_rng(0)
        query = rng.uniform(0, 500, size=(20, 2))
        model = fit_affine_least_squares(query, TRUE_MODEL.apply(query))
        np.testing.assert_allclose(model.matrix, TRUE_MODEL.matrix, atol=1e-9)
        self.assertAlmostEqual(model.det, TRUE_MODEL.det, places=9)

    def test_non_finite_correspondence(self):
        with self.assertRaises(InvalidInputError):
            Correspondence((float('nan'), 0.0), (0.0, 0.0))


class TestRansac(unittest.TestCase):
    """Тесты RANSAC"""

    def test_recovers_planted_model(self):
        corrs, mask = gen_geometry_pair(50, 50, affine=TRUE_MODEL, noise_px=0.5, seed=1)
        result = ransac_verify(corrs, iters=1000, inlier_tol=3.0, min_inliers=10, seed=0, image_id='x')
        self.assertTrue(result.accepted)
        self.assertEqual(result.image_id, 'x')
        self.assertEqual(result.inlier_count, 50)
        self.assertEqual(result.total_correspondences, 100)
        self.assertEqual(list(result.inlier_mask), mask.tolist())
        np.testing.assert_allclose(result.model.matrix, TRUE_MODEL.matrix, atol=1e-2)
        np.testing.assert_allclose(result.model.translation, TRUE_MODEL.translation, atol=2.0)

    def test_recovery_across_seeds(self):
        for seed in range(20):
            corrs, mask = gen_geometry_pair(70, 30, affine=TRUE_MODEL, noise_px=0.5, seed=100 + seed)
            result = ransac_verify(corrs, iters=1000, inlier_tol=3.0, seed=seed)
            found = np.array(result.inlier_mask)
            self.assertGreaterEqual(int(np.sum(found & mask)), 67, seed)
            self.assertLessEqual(int(np.sum(found & ~mask)), 2, seed)
            np.testing.assert_allclose(result.model.matrix, TRUE_MODEL.matrix, atol=0.02)

    def test_rejects_random_correspondences(self):
        rng = np.random.default_rng(2)
        corrs = [Correspondence(tuple(q), tuple(d))
                 for q, d in zip(rng.uniform(0, 1000, (60, 2)), rng.uniform(0, 1000, (60, 2)))]
        result = ransac_verify(corrs, iters=500, min_inliers=10, seed=0)
        self.assertFalse(result.accepted)
        self.assertGreaterEqual(result.inlier_count, 3)
        self.assertLess(result.inlier_count, 10)
        self.assertFalse(any(result.inlier_mask))

    def test_too_few_correspondences(self):
        result = ransac_verify([Correspondence((0, 0), (1, 1))] * 2)
        self.assertFalse(result.accepted)
        self.assertEqual(result.inlier_count, 0)
        self.assertEqual(result.total_correspondences, 2)

    def test_fewer_correspondences_than_min_inliers(self):
        corrs, _ = gen_geometry_pair(8, 0, affine=TRUE_MODEL, seed=5)
        result = ransac_verify(corrs, iters=100, min_inliers=10)
        self.assertFalse(result.accepted)
        self.assertEqual(result.inlier_count, 0)
        self.assertEqual(result.total_correspondences, 8)
        self.assertTrue(ransac_verify(corrs, iters=100, min_inliers=8).accepted)

    def test_zero_min_inliers_accepts_clean_pair(self):
        corrs, _ = gen_geometry_pair(3, 0, affine=TRUE_MODEL, seed=4)
        result = ransac_verify(corrs, iters=10, min_inliers=0)
        self.assertTrue(result.accepted)
        self.assertEqual(result.inlier_count, 3)

    def test_deterministic_for_seed(self):
        corrs, _ = gen_geometry_pair(20, 40, affine=TRUE_MODEL, noise_px=1.0, seed=3)
        first = ransac_verify(corrs, iters=300, seed=9)
        second = ransac_verify(corrs, iters=300, seed=9)
        self.assertEqual(first, second)

    def test_invalid_tolerance(self):
        corrs, _ = gen_geometry_pair(5, 0, seed=0)
        with self.assertRaises(InvalidInputError):
            ransac_verify(corrs, inlier_tol=0.0)
        with self.assertRaises(InvalidInputError):
            RansacParams(iters=0)


class TestRankResults(unittest.TestCase):
    """Тесты ранжирования кандидатов по инлайерам"""

    def setUp(self):
        strong, _ = gen_geometry_pair(40, 10, affine=TRUE_MODEL, noise_px=0.5, seed=5)
        weak, _ = gen_geometry_pair(15, 10, affine=TRUE_MODEL, noise_px=0.5, seed=6)
        rng = np.random.default_rng(7)
        noise = [Correspondence(tuple(q), tuple(d))
                 for q, d in zip(rng.uniform(0, 1000, (30, 2)), rng.uniform(0, 1000, (30, 2)))]
        self.candidates = {'img_b': strong, 'img_a': list(strong), 'img_w': weak, 'img_n': noise}
        self.params = RansacParams(iters=500, inlier_tol=3.0, min_inliers=10, seed=0)

    def test_order_and_rejection(self):
        ranked = rank_results(self.candidates, self.params)
        self.assertEqual([r.image_id for r in ranked], ['img_a', 'img_b', 'img_w'])
        self.assertEqual(ranked[0].inlier_count, 40)
        self.assertEqual(ranked[2].inlier_count, 15)

    def test_parallel_matches_serial(self):
        self.assertEqual(rank_results(self.candidates, self.params, workers=4),
                         rank_results(self.candidates, self.params))

    def test_params_from_config(self):
        params = RansacParams.from_config({'RANSAC_ITERS': 20, 'RANSAC_INLIER_TOL': 2,
                                           'RANSAC_MIN_INLIERS': 4, 'SEED': 3})
        self.assertEqual(params, RansacParams(20, 2.0, 4, 3))


if __name__ == '__main__':
    unittest.main()
