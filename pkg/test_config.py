#!/usr/bin/env python3
"""
Тесты конфигурации, валидаторов и метрик
"""

import json
import os
import shutil
import tempfile
import unittest

from config import ConfigManager
from config_validator import config_validator
from data_validator import DataValidator
from errors import ConfigError, StorageIOError
from index import IndexConfig, SearchParams
from metrics_manager import MetricsManager


class TestConfigManager(unittest.TestCase):
    """Тесты менеджера конфигурации"""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.path = os.path.join(self.temp_dir, 'config.json')

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def _write(self, payload):
        with open(self.path, 'w', encoding='utf-8') as f:
            if isinstance(payload, str):
                f.write(payload)
            else:
                json.dump(payload, f)

    def test_missing_file_gives_defaults(self):
        manager = ConfigManager(self.path)
        config = manager.load()
        self.assertEqual(config['COARSE_K'], 8192)
        self.assertEqual(config['PQ_M'], 10)
        self.assertEqual(config['PQ_BITS'], 5)
        self.assertEqual(config['TOP_K'], 60)
        self.assertEqual(config['FUSION_WEIGHT'], 0.25)

    def test_missing_required_file(self):
        with self.assertRaises(StorageIOError):
            ConfigManager(self.path).load(required=True)

    def test_file_overrides_defaults(self):
        self._write({'COARSE_K': 64, 'SOFT_ASSIGN': 3})
        config = ConfigManager(self.path).load()
        self.assertEqual(config['COARSE_K'], 64)
        self.assertEqual(config['SOFT_ASSIGN'], 3)
        self.assertEqual(config['KD_LEAF_MAX'], 30000)

    def test_invalid_values_reported_by_key(self):
        self._write({'PQ_BITS': 0, 'SELECTION_POLICY': 'random', 'TOP_K': 'many'})
        with self.assertRaises(ConfigError) as ctx:
            ConfigManager(self.path).load()
        self.assertEqual(sorted(ctx.exception.keys), ['PQ_BITS', 'SELECTION_POLICY', 'TOP_K'])

    def test_unknown_key_and_bool(self):
        self._write({'COARSE': 5, 'SEED': True})
        with self.assertRaises(ConfigError) as ctx:
            ConfigManager(self.path).load()
        self.assertEqual(sorted(ctx.exception.keys), ['COARSE', 'SEED'])

    def test_logical_relationships(self):
        self._write({'DESCRIPTOR_DIM': 40, 'PQ_M': 7})
        with self.assertRaises(ConfigError):
            ConfigManager(self.path).load()
        self._write({'COARSE_K': 4, 'SOFT_ASSIGN': 5})
        with self.assertRaises(ConfigError):
            ConfigManager(self.path).load()

    def test_broken_json(self):
        self._write('{"COARSE_K": ')
        with self.assertRaises(ConfigError):
            ConfigManager(self.path).load()
        self._write('[1, 2]')
        with self.assertRaises(ConfigError):
            ConfigManager(self.path).load()

    def test_overrides_skip_none(self):
        self._write({'COARSE_K': 64})
        manager = ConfigManager(self.path)
        manager.load()
        config = manager.apply_overrides({'COARSE_K': None, 'TOP_K': 5})
        self.assertEqual(config['COARSE_K'], 64)
        self.assertEqual(config['TOP_K'], 5)
        with self.assertRaises(ConfigError):
            manager.apply_overrides({'TOP_K': 0})
        self.assertEqual(manager.get('TOP_K'), 5)

    def test_save_and_reset(self):
        manager = ConfigManager(self.path)
        manager.load()
        manager.set('LEAF_BUDGET', 77)
        manager.save()
        self.assertEqual(ConfigManager(self.path).load()['LEAF_BUDGET'], 77)
        manager.reset_to_defaults()
        self.assertEqual(manager.get('LEAF_BUDGET'), 10000)

    def test_typed_parameters_from_config(self):
        config = ConfigManager(self.path).load()
        self.assertEqual(IndexConfig.from_config(config), IndexConfig())
        self.assertEqual(SearchParams.from_config(config), SearchParams())


class TestValidators(unittest.TestCase):
    """Тесты валидаторов конфигурации и данных"""

    def test_defaults_are_valid(self):
        is_valid, errors = config_validator.validate_config(config_validator.get_defaults())
        self.assertTrue(is_valid, errors)

    def test_recommendations(self):
        config = config_validator.get_defaults()
        config.update({'PQ_M': 20, 'PQ_BITS': 8, 'RANSAC_MIN_INLIERS': 2})
        recommendations = config_validator.get_recommendations(config)
        self.assertEqual(len(recommendations), 3)

    def test_feature_record(self):
        validator = DataValidator()
        good = {'x': 1.0, 'y': 2, 'scale': 0.5, 'score': 0.0, 'descriptor': [0.1, 0.2]}
        self.assertTrue(validator.validate_feature_record(good, 2))
        self.assertFalse(validator.validate_feature_record(good, 3))
        self.assertFalse(validator.validate_feature_record({**good, 'scale': 0}))
        self.assertFalse(validator.validate_feature_record({**good, 'score': -1}))
        self.assertFalse(validator.validate_feature_record({**good, 'x': float('inf')}))
        self.assertFalse(validator.validate_feature_record({k: v for k, v in good.items() if k != 'y'}))
        stats = validator.get_validation_stats()
        self.assertEqual(stats['total_validations'], 6)
        self.assertEqual(stats['failed_validations'], 5)

    def test_descriptor_and_geo(self):
        self.assertFalse(DataValidator.validate_descriptor([]))
        self.assertFalse(DataValidator.validate_descriptor([1.0, True]))
        self.assertTrue(DataValidator.validate_descriptor((1, 2.5)))
        validator = DataValidator()
        self.assertTrue(validator.validate_geo_record(45.0, -120.0))
        self.assertFalse(validator.validate_geo_record(95.0, 0.0))
        self.assertFalse(validator.validate_geo_record(float('nan'), 0.0))


class TestMetricsManager(unittest.TestCase):
    """Тесты менеджера метрик"""

    def test_timed_stage_and_counters(self):
        metrics = MetricsManager()
        with metrics.timed('stage'):
            pass
        with self.assertRaises(ValueError):
            with metrics.timed('stage'):
                raise ValueError('boom')
        metrics.increment('queries', 3)
        summary = metrics.get_summary()
        self.assertEqual(summary['stage_stats']['stage']['calls'], 2)
        self.assertEqual(summary['counters'], {'queries': 3})

    def test_memory(self):
        metrics = MetricsManager()
        self.assertGreater(metrics.record_memory('test'), 0.0)
        self.assertIn('rss_mb_test', metrics.get_performance_stats())
        metrics.reset()
        self.assertEqual(metrics.get_summary()['performance_stats'], {})


if __name__ == '__main__':
    unittest.main()
