#!/usr/bin/env python3
"""
Тесты продуктового квантования, упаковки кодов, ADC и LOPQ
"""

import unittest

import numpy as np

from errors import DimensionMismatchError, InsufficientDataError, InvalidInputError
from quantizer import (LocalPq, PqCode, adc_distance, adc_distances_packed, adc_table, fallback_local_pq,
                       lopq_train, pack_codes, pq_decode, pq_encode, pq_train, reconstruction_mse,
                       train_residual_pq, unpack_codes)


class TestCodePacking(unittest.TestCase):
    """Тесты упаковки индексов в байты"""

    def test_default_code_is_seven_bytes(self):
        codes = pack_codes(np.zeros((3, 10), dtype=np.int64), 5)
        self.assertEqual(codes.shape, (3, 7))

    def test_bit_layout_little_endian(self):
        indices = np.zeros((2, 10), dtype=np.int64)
        indices[0, 0] = 1
        indices[1, 1] = 1
        codes = pack_codes(indices, 5)
        self.assertEqual(codes[0].tobytes(), b'\x01' + b'\x00' * 6)
        self.assertEqual(codes[1].tobytes(), b'\x20' + b'\x00' * 6)

    def test_all_ones_fill_fifty_bits(self):
        codes = pack_codes(np.full((1, 10), 31, dtype=np.int64), 5)
        self.assertEqual(codes[0].tobytes(), b'\xff' * 6 + b'\x03')

    def test_wide_codes_use_slow_path(self):
        rng = np.random.default_rng(0)
        indices = rng.integers(0, 32, size=(5, 16))
        codes = pack_codes(indices, 5)
        self.assertEqual(codes.shape, (5, 10))
        np.testing.assert_array_equal(unpack_codes(codes, 16, 5), indices)

    def test_out_of_range_index(self):
        with self.assertRaises(InvalidInputError):
            pack_codes(np.array([[32]]), 5)
        with self.assertRaises(InvalidInputError):
            pack_codes(np.array([[-1]]), 5)

    def test_pq_code_indices(self):
        code = PqCode(b'\x21' + b'\x00' * 6)
        self.assertEqual(code.indices(10, 5).tolist(), [1, 1] + [0] * 8)


class TestProductQuantizer(unittest.TestCase):
    """Тесты обучения PQ и асимметричного расстояния"""

    def setUp(self):
        rng = np.random.default_rng(1)
        self.vectors = rng.normal(size=(300, 8))
        self.pq = pq_train(self.vectors, m=4, bits=3, iters=10, seed=0)

    def test_shapes(self):
        self.assertEqual(self.pq.codebooks.shape, (4, 8, 2))
        self.assertEqual(self.pq.code_bits, 12)
        self.assertEqual(self.pq.code_bytes, 2)

    def test_invalid_training_input(self):
        with self.assertRaises(InvalidInputError):
            pq_train(self.vectors, m=3, bits=3)
        with self.assertRaises(InsufficientDataError):
            pq_train(self.vectors[:7], m=4, bits=3)

    def test_codebook_vector_encodes_exactly(self):
        chosen = [3, 0, 7, 5]
        vector = np.concatenate([self.pq.codebooks[j][c] for j, c in enumerate(chosen)])
        code = pq_encode(self.pq, vector)
        self.assertEqual(code.indices(4, 3).tolist(), chosen)
        np.testing.assert_array_equal(pq_decode(self.pq, code), vector)

    def test_adc_equals_distance_to_reconstruction(self):
        query = self.vectors[0] + 0.3
        table = adc_table(self.pq, query)
        for vector in self.vectors[:20]:
            code = pq_encode(self.pq, vector)
            expected = float(np.sum((query - pq_decode(self.pq, code)) ** 2))
            self.assertAlmostEqual(adc_distance(table, code), expected, places=9)

    def test_packed_batch_matches_single(self):
        table = adc_table(self.pq, self.vectors[5])
        codes = self.pq.encode_batch(self.vectors[:30])
        batch = adc_distances_packed(table, codes)
        for row, distance in zip(codes, batch):
            self.assertAlmostEqual(adc_distance(table, PqCode(row.tobytes())), float(distance), places=12)

    def test_adc_dimension_check(self):
        with self.assertRaises(DimensionMismatchError):
            adc_table(self.pq, np.zeros(7))

    def test_more_bits_lower_error(self):
        coarse = pq_train(self.vectors, m=4, bits=2, iters=10)
        self.assertLess(reconstruction_mse(self.pq, self.vectors), reconstruction_mse(coarse, self.vectors))

    def test_training_trace_non_increasing(self):
        trace = self.pq.training_trace
        self.assertGreater(len(trace), 1)
        for before, after in zip(trace, trace[1:]):
            self.assertLessEqual(after, before * (1 + 1e-9) + 1e-12)


class TestLocalPq(unittest.TestCase):
    """Тесты локально оптимизированного квантователя"""

    def setUp(self):
        rng = np.random.default_rng(2)
        self.centroid = np.array([1.0, -1.0, 2.0, 0.0, 0.5, 3.0])
        scales = np.array([8.0, 4.0, 2.0, 1.0, 0.5, 0.25])
        self.vectors = self.centroid + rng.normal(size=(1000, 6)) * scales

    def test_rotation_close_to_identity_for_axis_aligned_data(self):
        local = lopq_train(self.vectors, self.centroid, m=3, bits=3, seed=0)
        self.assertFalse(local.fallback)
        np.testing.assert_allclose(local.rotation @ local.rotation.T, np.eye(6), atol=1e-8)
        self.assertTrue(np.all(np.diag(local.rotation) > 0.99))

    def test_error_not_worse_than_plain_pq(self):
        residuals = self.vectors - self.centroid
        local = lopq_train(self.vectors, self.centroid, m=3, bits=3, seed=0)
        plain = pq_train(residuals, m=3, bits=3, seed=0)
        lopq_mse = reconstruction_mse(local.pq, residuals, rotation=local.rotation)
        self.assertLessEqual(lopq_mse, 1.1 * reconstruction_mse(plain, residuals))

    def test_local_adc_matches_reconstruction(self):
        local = lopq_train(self.vectors, self.centroid, m=3, bits=3, seed=0)
        residuals = self.vectors[:10] - self.centroid
        codes = local.encode_residuals(residuals)
        query = residuals[0] * 0.5
        distances = adc_distances_packed(local.adc_table(query), codes)
        expected = np.sum((local.decode_residuals(codes) - query) ** 2, axis=1)
        np.testing.assert_allclose(distances, expected, rtol=0, atol=1e-9)

    def test_error_same_in_original_and_rotated_space(self):
        local = lopq_train(self.vectors, self.centroid, m=3, bits=3, seed=0)
        residuals = self.vectors - self.centroid
        codes = local.encode_residuals(residuals)
        original = np.sum((residuals - local.decode_residuals(codes)) ** 2, axis=1)
        rotated = np.sum((local.rotate(residuals) - local.pq.decode_batch(codes)) ** 2, axis=1)
        np.testing.assert_allclose(original, rotated, rtol=0, atol=1e-9)
        self.assertAlmostEqual(float(np.mean(original)),
                               reconstruction_mse(local.pq, residuals, rotation=local.rotation), delta=1e-9)

    def test_stored_rotation_is_float32_and_rebuilds_same_rotation(self):
        local = lopq_train(self.vectors, self.centroid, m=3, bits=3, seed=0)
        stored = local.storage_rotation
        np.testing.assert_array_equal(stored, stored.astype(np.float32).astype(np.float64))
        rebuilt = LocalPq.from_stored(stored.astype(np.float32).astype(np.float64), local.pq)
        np.testing.assert_array_equal(rebuilt.rotation, local.rotation)

    def test_rotation_orthonormal_on_anisotropic_data(self):
        rng = np.random.default_rng(5)
        scales = np.geomspace(10.0, 0.01, 40)
        mixing, _ = np.linalg.qr(rng.normal(size=(40, 40)))
        vectors = (rng.normal(size=(2000, 40)) * scales) @ mixing
        local = lopq_train(vectors, np.zeros(40), m=10, bits=5, seed=0, iters=5)
        np.testing.assert_allclose(local.rotation @ local.rotation.T, np.eye(40), atol=1e-8)
        residuals = vectors[:200]
        codes = local.encode_residuals(residuals)
        query = rng.normal(size=40)
        distances = adc_distances_packed(local.adc_table(query), codes)
        expected = np.sum((local.decode_residuals(codes) - query) ** 2, axis=1)
        np.testing.assert_allclose(distances, expected, rtol=1e-12, atol=1e-9)

    def test_small_cell_requires_fallback(self):
        with self.assertRaises(InsufficientDataError):
            lopq_train(self.vectors[:5], self.centroid, m=3, bits=3)

    def test_fallback_is_identity(self):
        pq = train_residual_pq(self.vectors[:5] - self.centroid, m=3, bits=3, iters=5, seed=0)
        local = fallback_local_pq(pq)
        self.assertTrue(local.fallback)
        np.testing.assert_array_equal(local.rotation, np.eye(6))
        self.assertEqual(pq.codebooks.shape, (3, 8, 2))


if __name__ == '__main__':
    unittest.main()
