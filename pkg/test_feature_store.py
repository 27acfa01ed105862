#!/usr/bin/env python3
"""
Тесты файлов конвейера: признаки, геометки, оценки, мешки
"""

import json
import os
import shutil
import tempfile
import unittest

import numpy as np

from attention import FeatureBag
from errors import FormatError, StorageIOError
from evaluation import GeoRecord, PrPoint, RetrievalRun
from feature_model import ImageFeatures, LocalFeature
from feature_store import (read_bags_jsonl, read_features, read_features_binary, read_features_jsonl,
                           read_geo_csv, read_query_csv, read_run_jsonl, read_scores_csv, write_bags_jsonl,
                           write_features_binary, write_features_jsonl, write_geo_csv, write_json, write_loss_csv,
                           write_pr_csv, write_query_csv, write_run_jsonl, write_scores_csv)


def _images():
    rng = np.random.default_rng(0)
    images = []
    for i in range(3):
        features = tuple(LocalFeature(descriptor=rng.normal(size=4), location=(10.0 * j, 0.5 + j),
                                      scale=0.25 * (j + 1), score=float(j)) for j in range(i + 1))
        images.append(ImageFeatures(f"img_{i}", features))
    images.append(ImageFeatures("empty", ()))
    return images


class TestFeatureFiles(unittest.TestCase):
    """Тесты файлов признаков"""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def _path(self, name):
        return os.path.join(self.temp_dir, name)

    def _assert_same(self, expected, actual):
        self.assertEqual([i.image_id for i in expected], [i.image_id for i in actual])
        for a, b in zip(expected, actual):
            self.assertEqual(len(a), len(b))
            if len(a):
                np.testing.assert_array_equal(a.descriptors(), b.descriptors())
                np.testing.assert_array_equal(a.locations(), b.locations())
                np.testing.assert_array_equal(a.scales(), b.scales())
                np.testing.assert_array_equal(a.scores(), b.scores())

    def test_jsonl_and_binary_agree(self):
        images = _images()
        write_features_jsonl(self._path('f.jsonl'), images)
        write_features_binary(self._path('f.dlf'), images)
        self._assert_same(images, read_features(self._path('f.jsonl')))
        self._assert_same(images, read_features(self._path('f.dlf')))

    def test_jsonl_reports_line(self):
        path = self._path('bad.jsonl')
        with open(path, 'w', encoding='utf-8') as f:
            f.write(json.dumps({'image_id': 'a', 'features': []}) + '\n')
            f.write(json.dumps({'image_id': 'b', 'features': [{'x': 0, 'y': 0, 'scale': -1, 'score': 0,
                                                               'descriptor': [1.0]}]}) + '\n')
        with self.assertRaises(FormatError) as ctx:
            read_features_jsonl(path)
        self.assertEqual(ctx.exception.field, f"{path}:2")

    def test_jsonl_dimension_mismatch(self):
        path = self._path('dims.jsonl')
        record = {'x': 0, 'y': 0, 'scale': 1, 'score': 0}
        with open(path, 'w', encoding='utf-8') as f:
            f.write(json.dumps({'image_id': 'a', 'features': [{**record, 'descriptor': [1.0, 2.0]},
                                                              {**record, 'descriptor': [1.0]}]}) + '\n')
        with self.assertRaises(FormatError):
            read_features_jsonl(path)

    def test_binary_truncated(self):
        path = self._path('f.dlf')
        write_features_binary(path, _images())
        with open(path, 'rb') as f:
            data = f.read()
        with open(path, 'wb') as f:
            f.write(data[:-3])
        with self.assertRaises(FormatError):
            read_features_binary(path)

    def test_missing_file(self):
        with self.assertRaises(StorageIOError):
            read_features(self._path('missing.jsonl'))


class TestTableFiles(unittest.TestCase):
    """Тесты CSV и JSONL с геометками и результатами"""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def _path(self, name):
        return os.path.join(self.temp_dir, name)

    def test_geo_and_queries(self):
        records = [GeoRecord('db_1', 48.8584, 2.2945, 'lm_1'), GeoRecord('db_2', -33.8568, 151.2153, 'lm_2')]
        write_geo_csv(self._path('geo.csv'), records)
        self.assertEqual(read_geo_csv(self._path('geo.csv')), records)
        queries = [GeoRecord('q_1', 48.86, 2.29)]
        write_query_csv(self._path('q.csv'), queries)
        self.assertEqual(read_query_csv(self._path('q.csv')), queries)

    def test_geo_out_of_range(self):
        with open(self._path('geo.csv'), 'w', encoding='utf-8') as f:
            f.write('image_id,lat,lon,landmark_id\nx,95,0,lm\n')
        with self.assertRaises(FormatError):
            read_geo_csv(self._path('geo.csv'))
        with open(self._path('geo.csv'), 'w', encoding='utf-8') as f:
            f.write('id,lat\n')
        with self.assertRaises(FormatError):
            read_geo_csv(self._path('geo.csv'))

    def test_scores_and_runs(self):
        run = RetrievalRun({'q1': [('a', 0.5), ('b', 2.0)], 'q2': [('c', 1.0)]})
        write_scores_csv(self._path('s.csv'), run)
        self.assertEqual(read_scores_csv(self._path('s.csv')).ranked('q1'), [('b', 2.0), ('a', 0.5)])
        write_run_jsonl(self._path('r.jsonl'), [{'query_id': 'q1', 'image_id': 'a', 'inliers': 12, 'total': 40}])
        self.assertEqual(read_run_jsonl(self._path('r.jsonl')).results, {'q1': [('a', 12.0)]})

    def test_run_without_score(self):
        with open(self._path('r.jsonl'), 'w', encoding='utf-8') as f:
            f.write('{"query_id": "q", "image_id": "a"}\n')
        with self.assertRaises(FormatError):
            read_run_jsonl(self._path('r.jsonl'))

    def test_reports(self):
        write_pr_csv(self._path('pr.csv'), [PrPoint(12.0, 1.0, 3, 0.5)])
        write_loss_csv(self._path('loss.csv'), [1.5, 0.25])
        write_json(self._path('summary.json'), {'b': 1, 'a': [1, 2]})
        with open(self._path('pr.csv'), encoding='utf-8') as f:
            self.assertEqual(f.read(), 'threshold,precision,recall\n12.0,1.0,3\n')
        with open(self._path('loss.csv'), encoding='utf-8') as f:
            self.assertEqual(f.read(), 'epoch,loss\n0,1.5\n1,0.25\n')
        with open(self._path('summary.json'), encoding='utf-8') as f:
            text = f.read()
        self.assertLess(text.index('"a"'), text.index('"b"'))

    def test_bags(self):
        bags = [FeatureBag(np.array([[1.0, 2.0], [3.0, 4.0]]), 0), FeatureBag(np.array([[0.5, -1.0]]), 1)]
        write_bags_jsonl(self._path('bags.jsonl'), bags, ['lm_a', 'lm_b'])
        loaded = read_bags_jsonl(self._path('bags.jsonl'))
        self.assertEqual([bag.label for bag in loaded], [0, 1])
        np.testing.assert_array_equal(loaded[0].features, bags[0].features)


if __name__ == '__main__':
    unittest.main()
