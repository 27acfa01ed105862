#!/usr/bin/env python3
"""
Тесты модели признаков: отбор, оценки L2, пирамида масштабов, рецептивное поле
"""

import math
import unittest

import numpy as np

from errors import InvalidInputError, DimensionMismatchError
from feature_model import (ImageFeatures, LocalFeature, ReceptiveFieldSpec, SelectionPolicy,
                           apply_l2_norm_scores, feature_center, l2_norm_scores, merge_pyramid,
                           receptive_field_size, scale_schedule, select_top_by_score)


def _feature(score, x=0.0, y=0.0, descriptor=(1.0, 0.0)):
    return LocalFeature(descriptor=np.array(descriptor), location=(x, y), score=score)


class TestLocalFeature(unittest.TestCase):
    """Тесты типов признаков"""

    def test_rejects_invalid_values(self):
        with self.assertRaises(InvalidInputError):
            LocalFeature(descriptor=np.array([1.0, np.nan]), location=(0, 0))
        with self.assertRaises(InvalidInputError):
            LocalFeature(descriptor=np.ones(2), location=(0, 0), scale=0.0)
        with self.assertRaises(InvalidInputError):
            LocalFeature(descriptor=np.ones(2), location=(0, 0), score=-1.0)

    def test_image_matrices(self):
        image = ImageFeatures('a', (_feature(1.0, 1, 2), _feature(2.0, 3, 4)))
        self.assertEqual(len(image), 2)
        self.assertEqual(image.dim, 2)
        np.testing.assert_array_equal(image.locations(), [[1, 2], [3, 4]])
        np.testing.assert_array_equal(image.scores(), [1.0, 2.0])


class TestSelection(unittest.TestCase):
    """Тесты отбора ключевых точек"""

    def test_top_by_score_order(self):
        features = [_feature(s, x=i) for i, s in enumerate([0.3, 0.9, 0.1, 0.9])]
        selected = select_top_by_score(features, 3)
        self.assertEqual([f.location[0] for f in selected], [1.0, 3.0, 0.0])

    def test_cap_larger_than_list(self):
        features = [_feature(0.5), _feature(0.7)]
        self.assertEqual(len(select_top_by_score(features, 1000)), 2)

    def test_zero_cap_and_negative_cap(self):
        self.assertEqual(select_top_by_score([_feature(1.0)], 0), [])
        with self.assertRaises(InvalidInputError):
            select_top_by_score([_feature(1.0)], -1)

    def test_equal_scores_keep_original_order(self):
        features = [_feature(1.0, x=i) for i in range(5)]
        self.assertEqual([f.location[0] for f in select_top_by_score(features, 5)], [0, 1, 2, 3, 4])

    def test_l2_norm_scores(self):
        scores = l2_norm_scores([np.array([3.0, 4.0]), np.array([0.0, 0.0])])
        self.assertEqual(scores, [5.0, 0.0])
        with self.assertRaises(DimensionMismatchError):
            l2_norm_scores([np.ones(2), np.ones(3)])

    def test_apply_l2_norm_scores(self):
        image = ImageFeatures('a', (_feature(0.0, descriptor=(3.0, 4.0)), _feature(0.0, descriptor=(1.0, 0.0))))
        scored = apply_l2_norm_scores(image)
        np.testing.assert_allclose(scored.scores(), [5.0, 1.0])

    def test_policy_values(self):
        self.assertIs(SelectionPolicy('attention'), SelectionPolicy.ATTENTION)
        self.assertIs(SelectionPolicy('l2_norm'), SelectionPolicy.L2_NORM)


class TestPyramidGeometry(unittest.TestCase):
    """Тесты расписания масштабов и рецептивного поля"""

    def test_default_schedule_has_seven_scales(self):
        schedule = scale_schedule()
        self.assertEqual(len(schedule.scales), 7)
        self.assertEqual(schedule.scales[0], 0.25)
        self.assertEqual(schedule.scales[-1], 2.0)
        self.assertAlmostEqual(schedule.scales[4], 1.0, places=12)

    def test_single_scale(self):
        self.assertEqual(scale_schedule(1.0, 1.0, 2.0).scales, (1.0,))

    def test_invalid_schedule(self):
        with self.assertRaises(InvalidInputError):
            scale_schedule(2.0, 1.0)
        with self.assertRaises(InvalidInputError):
            scale_schedule(0.25, 2.0, 1.0)

    def test_receptive_field_sizes(self):
        spec = ReceptiveFieldSpec()
        self.assertEqual(receptive_field_size(spec, 1.0), 291)
        self.assertEqual(receptive_field_size(spec, 2.0), 146)
        self.assertEqual(receptive_field_size(spec, 0.25), 1164)

    def test_feature_center(self):
        spec = ReceptiveFieldSpec()
        self.assertEqual(feature_center(spec, (0, 0), 1.0), (16.0, 16.0))
        self.assertEqual(feature_center(spec, (1, 2), 2.0), (40.0, 24.0))
        with self.assertRaises(InvalidInputError):
            feature_center(spec, (-1, 0), 1.0)

    def test_receptive_field_spec_validation(self):
        with self.assertRaises(InvalidInputError):
            ReceptiveFieldSpec(base_size=0)

    def test_merge_pyramid_keeps_schedule_order(self):
        levels = [[_feature(0.1, x=1)], [], [_feature(0.2, x=2), _feature(0.3, x=3)]]
        merged = merge_pyramid(levels)
        self.assertEqual([f.location[0] for f in merged], [1.0, 2.0, 3.0])
        self.assertTrue(math.isclose(sum(f.score for f in merged), 0.6))


if __name__ == '__main__':
    unittest.main()
