"""
Продуктовое квантование: обучение, упаковка кодов, асимметричное расстояние (ADC)
и локально оптимизированные квантователи ячеек (LOPQ)
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from errors import InvalidInputError, DimensionMismatchError, InsufficientDataError
from linalg import as_matrix, kmeans_train, orthonormalize_rows, principal_axes, snap_f32


@dataclass(frozen=True, eq=False)
class ProductQuantizer:
    m: int
    bits: int
    codebooks: np.ndarray                    # (m, 2^bits, sub_dim)
    training_trace: Tuple[float, ...] = ()   # средняя ошибка по итерациям Ллойда

    @property
    def ksub(self) -> int:
        return 1 << self.bits

    @property
    def sub_dim(self) -> int:
        return int(self.codebooks.shape[2])

    @property
    def dim(self) -> int:
        return self.m * self.sub_dim

    @property
    def code_bits(self) -> int:
        return self.m * self.bits

    @property
    def code_bytes(self) -> int:
        return (self.code_bits + 7) // 8

    def _check(self, vectors: np.ndarray):
        if vectors.shape[-1] != self.dim:
            raise DimensionMismatchError(self.dim, int(vectors.shape[-1]), "вектор PQ")

    def encode_indices(self, vectors: np.ndarray) -> np.ndarray:
        """Индексы ближайших центроидов по подпространствам, (n, m)"""
        matrix = as_matrix(vectors)
        self._check(matrix)
        sub = matrix.reshape(matrix.shape[0], self.m, self.sub_dim)
        indices = np.empty((matrix.shape[0], self.m), dtype=np.int64)
        for j in range(self.m):
            diff = sub[:, j, None, :] - self.codebooks[j][None, :, :]
            indices[:, j] = np.argmin(np.einsum('nkd,nkd->nk', diff, diff), axis=1)
        return indices

    def encode_batch(self, vectors: np.ndarray) -> np.ndarray:
        """Упакованные коды (n, code_bytes)"""
        return pack_codes(self.encode_indices(vectors), self.bits)

    def decode_indices(self, indices: np.ndarray) -> np.ndarray:
        indices = np.asarray(indices, dtype=np.int64).reshape(-1, self.m)
        parts = [self.codebooks[j][indices[:, j]] for j in range(self.m)]
        return np.concatenate(parts, axis=1)

    def decode_batch(self, codes: np.ndarray) -> np.ndarray:
        return self.decode_indices(unpack_codes(codes, self.m, self.bits))


@dataclass(frozen=True)
class PqCode:
    """Упакованный код: индекс j занимает биты [j·bits, (j+1)·bits), little-endian"""
    packed: bytes

    def indices(self, m: int, bits: int) -> np.ndarray:
        return unpack_codes(np.frombuffer(self.packed, dtype=np.uint8).reshape(1, -1), m, bits)[0]


@dataclass(frozen=True, eq=False)
class AdcTable:
    table: np.ndarray   # (m, 2^bits)
    bits: int

    @property
    def m(self) -> int:
        return int(self.table.shape[0])


@dataclass(frozen=True, eq=False)
class LocalPq:
    rotation: np.ndarray     # (d, d), строки ортонормированы
    pq: ProductQuantizer
    fallback: bool = False
    stored_rotation: Optional[np.ndarray] = field(default=None, repr=False)   # значения float32 из файла

    @classmethod
    def from_stored(cls, stored_rotation: np.ndarray, pq: ProductQuantizer) -> 'LocalPq':
        return cls(rotation=orthonormalize_rows(stored_rotation), pq=pq, stored_rotation=stored_rotation)

    @property
    def storage_rotation(self) -> np.ndarray:
        return self.rotation if self.stored_rotation is None else self.stored_rotation

    @property
    def dim(self) -> int:
        return int(self.rotation.shape[0])

    def rotate(self, residuals: np.ndarray) -> np.ndarray:
        return as_matrix(residuals) @ self.rotation.T

    def encode_residuals(self, residuals: np.ndarray) -> np.ndarray:
        return self.pq.encode_batch(self.rotate(residuals))

    def decode_residuals(self, codes: np.ndarray) -> np.ndarray:
        """Обратный поворот восстановленных остатков"""
        return self.pq.decode_batch(codes) @ self.rotation

    def adc_table(self, query_residual: np.ndarray) -> AdcTable:
        rotated = np.asarray(query_residual, dtype=np.float64) @ self.rotation.T
        return adc_table(self.pq, rotated)


def pack_codes(indices: np.ndarray, bits: int) -> np.ndarray:
    """Упаковывает индексы (n, m) в байты (n, ceil(m·bits/8)), little-endian"""
    indices = np.asarray(indices, dtype=np.int64)
    n, m = indices.shape
    if np.any(indices < 0) or np.any(indices >= (1 << bits)):
        raise InvalidInputError(f"Индекс кода вне диапазона [0, {1 << bits})")
    n_bytes = (m * bits + 7) // 8

    if m * bits <= 64:
        shifts = (np.arange(m, dtype=np.uint64) * np.uint64(bits))
        words = np.bitwise_or.reduce(indices.astype(np.uint64) << shifts[None, :], axis=1) if m else np.zeros(n, np.uint64)
        raw = words.astype('<u8').view(np.uint8).reshape(n, 8)
        return np.ascontiguousarray(raw[:, :n_bytes])

    out = np.zeros((n, n_bytes), dtype=np.uint8)
    for row in range(n):
        value = 0
        for j in range(m):
            value |= int(indices[row, j]) << (j * bits)
        out[row] = np.frombuffer(value.to_bytes(n_bytes, 'little'), dtype=np.uint8)
    return out


def unpack_codes(codes: np.ndarray, m: int, bits: int) -> np.ndarray:
    """Обратная операция к pack_codes: (n, code_bytes) → (n, m)"""
    codes = np.asarray(codes, dtype=np.uint8)
    if codes.ndim == 1:
        codes = codes.reshape(1, -1)
    n, n_bytes = codes.shape
    mask = (1 << bits) - 1

    if m * bits <= 64:
        padded = np.zeros((n, 8), dtype=np.uint8)
        padded[:, :n_bytes] = codes
        words = padded.view('<u8').reshape(n).astype(np.uint64)
        shifts = (np.arange(m, dtype=np.uint64) * np.uint64(bits))
        return ((words[:, None] >> shifts[None, :]) & np.uint64(mask)).astype(np.int64)

    out = np.empty((n, m), dtype=np.int64)
    for row in range(n):
        value = int.from_bytes(codes[row].tobytes(), 'little')
        for j in range(m):
            out[row, j] = (value >> (j * bits)) & mask
    return out


def pq_train(vectors, m: int = 10, bits: int = 5, iters: int = 15, seed: int = 0) -> ProductQuantizer:
    """Обучает m подсловарей по 2^bits центроидов k-means на срезах векторов"""
    matrix = as_matrix(vectors)
    n, dim = matrix.shape
    if m < 1 or bits < 1:
        raise InvalidInputError(f"Некорректные параметры PQ: m={m}, bits={bits}")
    if dim % m != 0:
        raise InvalidInputError(f"Размерность {dim} не делится на m={m}")
    ksub = 1 << bits
    if n < ksub:
        raise InsufficientDataError(f"Для 2^{bits} центроидов нужно не меньше {ksub} векторов, получено {n}")

    sub_dim = dim // m
    codebooks = np.empty((m, ksub, sub_dim), dtype=np.float64)
    traces = []
    for j in range(m):
        model = kmeans_train(matrix[:, j * sub_dim:(j + 1) * sub_dim], ksub, max_iters=iters, seed=seed + j)
        codebooks[j] = model.centroids
        traces.append(model.inertia_trace)

    # Суммарная ошибка по итерациям: короткие трассы продлеваются последним значением
    length = max(len(t) for t in traces)
    total = np.zeros(length)
    for t in traces:
        total += np.concatenate([t, np.full(length - len(t), t[-1])])
    return ProductQuantizer(m=m, bits=bits, codebooks=codebooks, training_trace=tuple((total / n).tolist()))


def pq_encode(pq: ProductQuantizer, v) -> PqCode:
    vector = np.asarray(v, dtype=np.float64)
    if vector.ndim != 1:
        raise InvalidInputError("pq_encode ожидает один вектор")
    return PqCode(pq.encode_batch(vector)[0].tobytes())


def pq_decode(pq: ProductQuantizer, code: PqCode) -> np.ndarray:
    return pq.decode_indices(code.indices(pq.m, pq.bits))[0]


def adc_table(pq: ProductQuantizer, query) -> AdcTable:
    """table[j][c] = ||query_j − codebook_j[c]||²"""
    vector = np.asarray(query, dtype=np.float64)
    if vector.ndim != 1 or vector.shape[0] != pq.dim:
        raise DimensionMismatchError(pq.dim, int(vector.size), "запрос ADC")
    sub = vector.reshape(pq.m, 1, pq.sub_dim)
    diff = pq.codebooks - sub
    return AdcTable(table=np.einsum('mkd,mkd->mk', diff, diff), bits=pq.bits)


def adc_distance(table: AdcTable, code: PqCode) -> float:
    indices = code.indices(table.m, table.bits)
    return float(table.table[np.arange(table.m), indices].sum())


def adc_distances(table: AdcTable, indices: np.ndarray) -> np.ndarray:
    """Пакетный ADC по распакованным индексам (n, m)"""
    indices = np.asarray(indices, dtype=np.int64).reshape(-1, table.m)
    return table.table[np.arange(table.m)[None, :], indices].sum(axis=1)


def adc_distances_packed(table: AdcTable, codes: np.ndarray) -> np.ndarray:
    return adc_distances(table, unpack_codes(codes, table.m, table.bits))


def lopq_train(cell_vectors, coarse_centroid, m: int = 10, bits: int = 5,
               seed: int = 0, iters: int = 15) -> LocalPq:
    """
    LOPQ ячейки: поворот задаёт базис PCA остатков, PQ обучается на повёрнутых остатках.
    Слишком мало векторов → InsufficientDataError (вызывающий берёт общий PQ).
    """
    matrix = as_matrix(cell_vectors)
    centroid = np.asarray(coarse_centroid, dtype=np.float64)
    if centroid.shape[0] != matrix.shape[1]:
        raise DimensionMismatchError(matrix.shape[1], centroid.shape[0], "центроид ячейки")
    if matrix.shape[0] < (1 << bits):
        raise InsufficientDataError(f"Ячейке нужно не меньше {1 << bits} векторов, получено {matrix.shape[0]}")

    residuals = matrix - centroid
    _, axes, _ = principal_axes(residuals)
    # В файл идут значения float32, рабочий поворот ортонормируется из них заново
    stored = snap_f32(axes)
    rotation = orthonormalize_rows(stored)
    pq = pq_train(residuals @ rotation.T, m=m, bits=bits, iters=iters, seed=seed)
    return LocalPq(rotation=rotation, pq=snap_pq(pq), stored_rotation=stored)


def fallback_local_pq(pq: ProductQuantizer) -> LocalPq:
    return LocalPq(rotation=np.eye(pq.dim), pq=pq, fallback=True)


def train_residual_pq(residuals, m: int, bits: int, iters: int, seed: int) -> ProductQuantizer:
    """Общий PQ остатков; при нехватке векторов обучающее множество повторяется по кругу"""
    matrix = as_matrix(residuals)
    ksub = 1 << bits
    if matrix.shape[0] < ksub:
        matrix = np.resize(matrix, (ksub, matrix.shape[1]))
    return snap_pq(pq_train(matrix, m=m, bits=bits, iters=iters, seed=seed))


def snap_pq(pq: ProductQuantizer) -> ProductQuantizer:
    return ProductQuantizer(m=pq.m, bits=pq.bits, codebooks=snap_f32(pq.codebooks),
                            training_trace=pq.training_trace)


def reconstruction_mse(pq: ProductQuantizer, vectors, rotation: Optional[np.ndarray] = None) -> float:
    """Средняя квадратичная ошибка восстановления на наборе векторов"""
    matrix = as_matrix(vectors)
    if rotation is not None:
        matrix = matrix @ rotation.T
    decoded = pq.decode_indices(pq.encode_indices(matrix))
    return float(np.mean(np.sum((matrix - decoded) ** 2, axis=1)))
