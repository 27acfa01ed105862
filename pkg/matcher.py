"""
Геометрическая проверка соответствий: RANSAC по аффинной модели,
число инлайеров служит оценкой изображения
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from errors import DegenerateSampleError, InvalidInputError
from logger import engine_logger

DET_EPS = 1e-9
# Сколько гипотез RANSAC проверяется одним пакетом
HYPOTHESIS_CHUNK = 256


@dataclass(frozen=True)
class Correspondence:
    query_point: Tuple[float, float]
    db_point: Tuple[float, float]

    def __post_init__(self):
        qx, qy = (float(v) for v in self.query_point)
        dx, dy = (float(v) for v in self.db_point)
        if not all(math.isfinite(v) for v in (qx, qy, dx, dy)):
            raise InvalidInputError(f"Некорректное соответствие: {self.query_point} -> {self.db_point}")
        object.__setattr__(self, 'query_point', (qx, qy))
        object.__setattr__(self, 'db_point', (dx, dy))


@dataclass(frozen=True)
class AffineModel:
    """p' = A·p + t"""
    a11: float
    a12: float
    a21: float
    a22: float
    tx: float
    ty: float

    @classmethod
    def from_arrays(cls, matrix: np.ndarray, translation: np.ndarray) -> 'AffineModel':
        return cls(float(matrix[0, 0]), float(matrix[0, 1]), float(matrix[1, 0]), float(matrix[1, 1]),
                   float(translation[0]), float(translation[1]))

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a21, self.a22]])

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.tx, self.ty])

    @property
    def det(self) -> float:
        return self.a11 * self.a22 - self.a12 * self.a21

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        return points @ self.matrix.T + self.translation


@dataclass(frozen=True)
class RansacParams:
    iters: int = 1000
    inlier_tol: float = 3.0
    min_inliers: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.iters < 1:
            raise InvalidInputError(f"iters должно быть >= 1: {self.iters}")
        if not self.inlier_tol > 0:
            raise InvalidInputError(f"inlier_tol должен быть положительным: {self.inlier_tol}")
        if self.min_inliers < 0:
            raise InvalidInputError(f"min_inliers не может быть отрицательным: {self.min_inliers}")

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> 'RansacParams':
        return cls(iters=config['RANSAC_ITERS'], inlier_tol=float(config['RANSAC_INLIER_TOL']),
                   min_inliers=config['RANSAC_MIN_INLIERS'], seed=config['SEED'])


@dataclass(frozen=True)
class VerificationResult:
    image_id: str
    inlier_count: int
    model: Optional[AffineModel]
    total_correspondences: int
    inlier_mask: Tuple[bool, ...] = ()

    @property
    def accepted(self) -> bool:
        return self.model is not None


def _point_arrays(correspondences: Sequence[Correspondence]) -> Tuple[np.ndarray, np.ndarray]:
    query = np.array([c.query_point for c in correspondences], dtype=np.float64).reshape(-1, 2)
    db = np.array([c.db_point for c in correspondences], dtype=np.float64).reshape(-1, 2)
    return query, db


def _design(points: np.ndarray) -> np.ndarray:
    return np.concatenate([points, np.ones(points.shape[:-1] + (1,))], axis=-1)


def estimate_affine(sample: Sequence[Correspondence]) -> AffineModel:
    """Точное решение по трём соответствиям"""
    if len(sample) != 3:
        raise InvalidInputError(f"Нужно ровно 3 соответствия, получено {len(sample)}")
    query, db = _point_arrays(sample)
    system = _design(query)
    if abs(np.linalg.det(system)) < DET_EPS:
        raise DegenerateSampleError("Точки запроса коллинеарны")
    solution = np.linalg.solve(system, db)
    model = AffineModel.from_arrays(solution[:2].T, solution[2])
    if abs(model.det) <= DET_EPS:
        raise DegenerateSampleError("Вырожденная аффинная модель")
    return model


def fit_affine_least_squares(query: np.ndarray, db: np.ndarray) -> AffineModel:
    """МНК-оценка по всем переданным парам точек"""
    system = _design(np.asarray(query, dtype=np.float64).reshape(-1, 2))
    if system.shape[0] < 3:
        raise DegenerateSampleError("Для МНК нужно не меньше 3 точек")
    solution, _, rank, _ = np.linalg.lstsq(system, np.asarray(db, dtype=np.float64).reshape(-1, 2), rcond=None)
    if rank < 3:
        raise DegenerateSampleError("Точки запроса коллинеарны")
    model = AffineModel.from_arrays(solution[:2].T, solution[2])
    if abs(model.det) <= DET_EPS:
        raise DegenerateSampleError("Вырожденная аффинная модель")
    return model


def _inliers(model: AffineModel, query: np.ndarray, db: np.ndarray, tol: float) -> np.ndarray:
    return np.linalg.norm(model.apply(query) - db, axis=1) <= tol


def _best_hypothesis(query: np.ndarray, db: np.ndarray, iters: int, tol: float,
                     rng: np.random.Generator) -> Tuple[Optional[AffineModel], int]:
    """Лучшая гипотеза по числу инлайеров, при равенстве побеждает более ранняя"""
    n = query.shape[0]
    best_model, best_count = None, 0
    for start in range(0, iters, HYPOTHESIS_CHUNK):
        size = min(HYPOTHESIS_CHUNK, iters - start)
        samples = np.argsort(rng.random((size, n)), axis=1)[:, :3]
        systems = _design(query[samples])                 # (size, 3, 3)
        valid = np.abs(np.linalg.det(systems)) >= DET_EPS
        if not np.any(valid):
            continue
        solutions = np.linalg.solve(systems[valid], db[samples[valid]])   # (v, 3, 2)
        matrices = np.transpose(solutions[:, :2, :], (0, 2, 1))
        translations = solutions[:, 2, :]
        dets = matrices[:, 0, 0] * matrices[:, 1, 1] - matrices[:, 0, 1] * matrices[:, 1, 0]
        projected = np.einsum('vij,nj->vni', matrices, query) + translations[:, None, :]
        counts = np.sum(np.linalg.norm(projected - db[None], axis=2) <= tol, axis=1)
        counts[np.abs(dets) <= DET_EPS] = -1
        winner = int(np.argmax(counts))
        if counts[winner] > best_count:
            best_count = int(counts[winner])
            best_model = AffineModel.from_arrays(matrices[winner], translations[winner])
    return best_model, best_count


def ransac_verify(correspondences: Sequence[Correspondence], iters: int = 1000, inlier_tol: float = 3.0,
                  min_inliers: int = 10, seed: int = 0, image_id: str = "") -> VerificationResult:
    """
    RANSAC по случайным тройкам с уточнением модели МНК на множестве инлайеров.
    Отказ (мало соответствий или инлайеров) даёт model=None.
    """
    if not inlier_tol > 0:
        raise InvalidInputError(f"inlier_tol должен быть положительным: {inlier_tol}")
    n = len(correspondences)
    # Меньше min_inliers соответствий: принять кандидата невозможно
    if n < max(3, min_inliers):
        return VerificationResult(image_id, 0, None, n, (False,) * n)

    query, db = _point_arrays(correspondences)
    rng = np.random.default_rng(seed)
    raw_model, raw_count = _best_hypothesis(query, db, iters, inlier_tol, rng)
    if raw_model is None:
        return VerificationResult(image_id, 0, None, n, (False,) * n)

    model = raw_model
    mask = _inliers(raw_model, query, db, inlier_tol)
    try:
        refit = fit_affine_least_squares(query[mask], db[mask])
        refit_mask = _inliers(refit, query, db, inlier_tol)
        if refit_mask.sum() >= mask.sum():
            model, mask = refit, refit_mask
    except DegenerateSampleError:
        pass

    count = int(mask.sum())
    if count < min_inliers:
        return VerificationResult(image_id, raw_count, None, n, (False,) * n)
    return VerificationResult(image_id, count, model, n, tuple(bool(v) for v in mask))


def rank_results(candidates: Mapping[str, Sequence[Correspondence]], params: RansacParams = RansacParams(),
                 workers: int = 1) -> List[VerificationResult]:
    """Проверяет кандидатов и ранжирует принятые по числу инлайеров, затем по image_id"""
    image_ids = sorted(candidates)

    def verify(image_id: str) -> VerificationResult:
        return ransac_verify(candidates[image_id], iters=params.iters, inlier_tol=params.inlier_tol,
                             min_inliers=params.min_inliers, seed=params.seed, image_id=image_id)

    if workers > 1 and len(image_ids) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(verify, image_ids))
    else:
        results = [verify(image_id) for image_id in image_ids]

    accepted = [r for r in results if r.model is not None and r.inlier_count >= params.min_inliers]
    engine_logger.debug(f"Геометрическая проверка: принято {len(accepted)} из {len(results)}")
    return sorted(accepted, key=lambda r: (-r.inlier_count, r.image_id))
