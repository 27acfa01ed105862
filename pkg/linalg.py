"""
Детерминированные k-means, PCA и нормализация
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from errors import InvalidInputError, DimensionMismatchError, InsufficientDataError
from logger import engine_logger

EPS = 1e-12
# Блок строк при подсчёте попарных расстояний, чтобы не держать n x k целиком
ASSIGN_CHUNK = 4096


@dataclass(frozen=True, eq=False)
class KMeansModel:
    centroids: np.ndarray
    inertia: float
    inertia_trace: Tuple[float, ...] = field(default_factory=tuple)

    @property
    def k(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def dim(self) -> int:
        return int(self.centroids.shape[1])


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    stored_components: Optional[np.ndarray] = field(default=None, repr=False)   # значения float32 из файла

    @classmethod
    def from_stored(cls, mean: np.ndarray, stored_components: np.ndarray,
                    explained_variance: np.ndarray) -> 'PcaModel':
        """Модель из хранимых значений: рабочие компоненты заново ортонормируются"""
        return cls(mean=mean, components=orthonormalize_rows(stored_components),
                   explained_variance=explained_variance, stored_components=stored_components)

    @property
    def storage_components(self) -> np.ndarray:
        return self.components if self.stored_components is None else self.stored_components

    @property
    def in_dim(self) -> int:
        return int(self.components.shape[1])

    @property
    def out_dim(self) -> int:
        return int(self.components.shape[0])


def snap_f32(values: np.ndarray) -> np.ndarray:
    """Округляет до значений, точно представимых во float32 (формат хранения)"""
    return np.asarray(values, dtype=np.float64).astype(np.float32).astype(np.float64)


def orthonormalize_rows(matrix: np.ndarray) -> np.ndarray:
    """Ближайшая матрица с ортонормированными строками: полярный множитель U·Vᵀ из SVD"""
    matrix = np.asarray(matrix, dtype=np.float64)
    u, _, vt = np.linalg.svd(matrix, full_matrices=False)
    return u @ vt


def as_matrix(points, what: str = "точки") -> np.ndarray:
    matrix = np.asarray(points, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix.reshape(1, -1)
    if matrix.ndim != 2:
        raise InvalidInputError(f"{what}: ожидается матрица (n, d)")
    return matrix


def l2_normalize(v: np.ndarray, eps: float = EPS) -> np.ndarray:
    """v/||v||; нулевой вектор возвращается без изменений"""
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm <= eps:
        return v.copy()
    return v / norm


def l2_normalize_rows(matrix: np.ndarray, eps: float = EPS) -> np.ndarray:
    matrix = as_matrix(matrix)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    safe = np.where(norms > eps, norms, 1.0)
    return matrix / safe


def squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Попарные квадраты расстояний (n, k), считаются блоками"""
    out = np.empty((points.shape[0], centroids.shape[0]), dtype=np.float64)
    c_norms = np.einsum('ij,ij->i', centroids, centroids)
    for start in range(0, points.shape[0], ASSIGN_CHUNK):
        block = points[start:start + ASSIGN_CHUNK]
        b_norms = np.einsum('ij,ij->i', block, block)
        d2 = b_norms[:, None] - 2.0 * block @ centroids.T + c_norms[None, :]
        np.maximum(d2, 0.0, out=d2)
        out[start:start + ASSIGN_CHUNK] = d2
    return out


def assign_batch(points: np.ndarray, centroids: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Ближайший центроид для каждой точки: (метки, квадраты расстояний)"""
    labels = np.empty(points.shape[0], dtype=np.int64)
    best = np.empty(points.shape[0], dtype=np.float64)
    c_norms = np.einsum('ij,ij->i', centroids, centroids)
    for start in range(0, points.shape[0], ASSIGN_CHUNK):
        block = points[start:start + ASSIGN_CHUNK]
        b_norms = np.einsum('ij,ij->i', block, block)
        d2 = b_norms[:, None] - 2.0 * block @ centroids.T + c_norms[None, :]
        idx = np.argmin(d2, axis=1)
        labels[start:start + ASSIGN_CHUNK] = idx
        # Точное расстояние до выбранного центроида
        diff = block - centroids[idx]
        best[start:start + ASSIGN_CHUNK] = np.einsum('ij,ij->i', diff, diff)
    return labels, best


def _init_centroids_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Жадная инициализация k-means++ (несколько кандидатов на шаг)"""
    n = points.shape[0]
    n_trials = 2 + int(math.log(k))
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    centroids[0] = points[rng.integers(n)]
    closest = np.einsum('ij,ij->i', points - centroids[0], points - centroids[0])

    for c in range(1, k):
        potential = float(closest.sum())
        if potential <= 0.0:
            # Все точки уже совпадают с центроидами
            candidates = rng.integers(n, size=n_trials)
        else:
            cumulative = np.cumsum(closest)
            draws = rng.random(n_trials) * cumulative[-1]
            candidates = np.minimum(np.searchsorted(cumulative, draws, side='right'), n - 1)

        best_candidate, best_potential, best_closest = None, None, None
        for candidate in candidates:
            diff = points - points[candidate]
            candidate_closest = np.minimum(closest, np.einsum('ij,ij->i', diff, diff))
            candidate_potential = float(candidate_closest.sum())
            if best_potential is None or candidate_potential < best_potential:
                best_candidate, best_potential, best_closest = candidate, candidate_potential, candidate_closest

        centroids[c] = points[best_candidate]
        closest = best_closest

    return centroids


def _update_centroids(points: np.ndarray, labels: np.ndarray, distances: np.ndarray,
                      centroids: np.ndarray) -> np.ndarray:
    """Шаг Ллойда: среднее кластера; пустой кластер получает самую дальнюю точку"""
    k, dim = centroids.shape
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros((k, dim), dtype=np.float64)
    np.add.at(sums, labels, points)
    updated = centroids.copy()
    filled = counts > 0
    updated[filled] = sums[filled] / counts[filled, None]

    empty = np.flatnonzero(~filled)
    if empty.size:
        remaining = distances.copy()
        for c in empty:
            farthest = int(np.argmax(remaining))
            updated[c] = points[farthest]
            remaining[farthest] = -1.0
        engine_logger.debug(f"k-means: пересеяно пустых кластеров: {empty.size}")
    return updated


def kmeans_train(points, k: int, max_iters: int = 20, seed: int = 0) -> KMeansModel:
    """
    Алгоритм Ллойда с инициализацией k-means++ от зерна seed.
    Останавливается по max_iters или когда назначения не изменились.
    """
    matrix = as_matrix(points)
    n = matrix.shape[0]
    if k < 1:
        raise InvalidInputError(f"k должно быть не меньше 1: {k}")
    if n < k:
        raise InsufficientDataError(f"Для k={k} нужно не меньше {k} точек, получено {n}")

    rng = np.random.default_rng(seed)
    centroids = _init_centroids_pp(matrix, k, rng)
    labels, distances = assign_batch(matrix, centroids)
    trace = [float(distances.sum())]

    for _ in range(max_iters):
        centroids = _update_centroids(matrix, labels, distances, centroids)
        new_labels, distances = assign_batch(matrix, centroids)
        inertia = float(distances.sum())
        if inertia > trace[-1] * (1 + 1e-9) + 1e-12:
            engine_logger.warning(f"k-means: инерция выросла {trace[-1]:.6g} -> {inertia:.6g}")
        trace.append(inertia)
        changed = bool(np.any(new_labels != labels))
        labels = new_labels
        if not changed:
            break

    return KMeansModel(centroids=centroids, inertia=trace[-1], inertia_trace=tuple(trace))


def kmeans_assign(model: KMeansModel, point) -> Tuple[int, float]:
    """Ближайший центроид: (индекс, квадрат расстояния), при равенстве меньший индекс"""
    vector = np.asarray(point, dtype=np.float64)
    if vector.ndim != 1 or vector.shape[0] != model.dim:
        raise DimensionMismatchError(model.dim, int(vector.size), "точка")
    diff = model.centroids - vector
    d2 = np.einsum('ij,ij->i', diff, diff)
    idx = int(np.argmin(d2))
    return idx, float(d2[idx])


def principal_axes(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Собственное разложение ковариации центрированных точек.
    Возвращает (mean, оси по убыванию дисперсии построчно, дисперсии).
    Знак оси: наибольшая по модулю компонента положительна.
    """
    matrix = as_matrix(points)
    mean = matrix.mean(axis=0)
    centered = matrix - mean
    dof = max(matrix.shape[0] - 1, 1)
    covariance = centered.T @ centered / dof
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    order = np.argsort(eigenvalues, kind='stable')[::-1]
    axes = eigenvectors[:, order].T.copy()
    variances = np.maximum(eigenvalues[order], 0.0)

    pivots = np.argmax(np.abs(axes), axis=1)
    signs = np.sign(axes[np.arange(axes.shape[0]), pivots])
    signs[signs == 0] = 1.0
    axes *= signs[:, None]
    return mean, axes, variances


def pca_train(points, out_dim: int) -> PcaModel:
    """PCA на центрированной ковариации, out_dim главных компонент"""
    matrix = as_matrix(points)
    n, dim = matrix.shape
    if out_dim < 1 or out_dim > dim:
        raise InvalidInputError(f"out_dim={out_dim} вне диапазона [1, {dim}]")
    if n <= out_dim:
        raise InsufficientDataError(f"Для PCA до {out_dim} нужно больше {out_dim} точек, получено {n}")
    mean, axes, variances = principal_axes(matrix)
    return PcaModel(mean=mean, components=axes[:out_dim], explained_variance=variances[:out_dim])


def pca_project(model: PcaModel, v) -> np.ndarray:
    """components · (v − mean)"""
    vector = np.asarray(v, dtype=np.float64)
    if vector.shape[-1] != model.in_dim:
        raise DimensionMismatchError(model.in_dim, int(vector.shape[-1]), "вектор PCA")
    return (vector - model.mean) @ model.components.T


def reduce_descriptor(model: PcaModel, raw) -> np.ndarray:
    """L2 → PCA → L2; нулевой дескриптор переходит в нулевой"""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1 or raw.shape[0] != model.in_dim:
        raise DimensionMismatchError(model.in_dim, int(raw.size), "дескриптор")
    if np.linalg.norm(raw) <= EPS:
        return np.zeros(model.out_dim)
    return l2_normalize(pca_project(model, l2_normalize(raw)))


def reduce_descriptors(model: PcaModel, raw: np.ndarray) -> np.ndarray:
    """Пакетный reduce_descriptor для матрицы (n, d_raw)"""
    matrix = as_matrix(raw)
    if matrix.shape[1] != model.in_dim:
        raise DimensionMismatchError(model.in_dim, matrix.shape[1], "дескрипторы")
    zero = np.linalg.norm(matrix, axis=1) <= EPS
    projected = l2_normalize_rows(pca_project(model, l2_normalize_rows(matrix)))
    projected[zero] = 0.0
    return projected


def snap_pca(model: PcaModel) -> PcaModel:
    """Параметры округляются до float32, компоненты после округления снова ортонормируются"""
    if model.stored_components is not None:
        return model
    return PcaModel.from_stored(snap_f32(model.mean), snap_f32(model.components),
                                snap_f32(model.explained_variance))
