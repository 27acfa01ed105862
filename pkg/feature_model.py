"""
Модель локальных признаков: типы, отбор ключевых точек и геометрия пирамиды
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np

from errors import InvalidInputError, DimensionMismatchError


class SelectionPolicy(Enum):
    ATTENTION = "attention"
    L2_NORM = "l2_norm"


@dataclass(frozen=True, eq=False)
class LocalFeature:
    """Локальный признак: дескриптор, центр рецептивного поля, масштаб и оценка"""
    descriptor: np.ndarray
    location: Tuple[float, float]
    scale: float = 1.0
    score: float = 0.0

    def __post_init__(self):
        descriptor = np.asarray(self.descriptor, dtype=np.float64)
        if descriptor.ndim != 1 or not np.all(np.isfinite(descriptor)):
            raise InvalidInputError("Дескриптор должен быть конечным одномерным вектором")
        x, y = (float(v) for v in self.location)
        if not (math.isfinite(x) and math.isfinite(y)):
            raise InvalidInputError(f"Некорректное положение признака: {self.location}")
        if not self.scale > 0:
            raise InvalidInputError(f"Масштаб должен быть положительным: {self.scale}")
        if not self.score >= 0:
            raise InvalidInputError(f"Оценка признака отрицательна: {self.score}")
        object.__setattr__(self, 'descriptor', descriptor)
        object.__setattr__(self, 'location', (x, y))
        object.__setattr__(self, 'scale', float(self.scale))
        object.__setattr__(self, 'score', float(self.score))

    @property
    def dim(self) -> int:
        return int(self.descriptor.shape[0])

    def with_score(self, score: float) -> 'LocalFeature':
        return replace(self, score=float(score))

    def with_descriptor(self, descriptor: np.ndarray) -> 'LocalFeature':
        return replace(self, descriptor=descriptor)


@dataclass(frozen=True, eq=False)
class ImageFeatures:
    image_id: str
    features: Tuple[LocalFeature, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, 'features', tuple(self.features))

    def __len__(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features[0].dim if self.features else 0

    def descriptors(self) -> np.ndarray:
        """Матрица дескрипторов (N, d)"""
        if not self.features:
            return np.zeros((0, 0))
        return np.vstack([f.descriptor for f in self.features])

    def locations(self) -> np.ndarray:
        """Матрица положений (N, 2)"""
        return np.array([f.location for f in self.features], dtype=np.float64).reshape(-1, 2)

    def scores(self) -> np.ndarray:
        return np.array([f.score for f in self.features], dtype=np.float64)

    def scales(self) -> np.ndarray:
        return np.array([f.scale for f in self.features], dtype=np.float64)

    def with_features(self, features: Sequence[LocalFeature]) -> 'ImageFeatures':
        return ImageFeatures(self.image_id, tuple(features))


@dataclass(frozen=True)
class ScaleSchedule:
    min_scale: float
    max_scale: float
    factor: float
    scales: Tuple[float, ...]


@dataclass(frozen=True)
class ReceptiveFieldSpec:
    base_size: int = 291
    base_stride: int = 32

    def __post_init__(self):
        for name in ('base_size', 'base_stride'):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
                raise InvalidInputError(f"{name} должен быть положительным целым: {value}")


def select_top_by_score(features: Sequence[LocalFeature], cap: int) -> List[LocalFeature]:
    """
    Отбирает cap признаков с наибольшей оценкой.
    Порядок: по убыванию оценки, при равенстве раньше идёт меньший индекс.
    """
    if cap < 0:
        raise InvalidInputError(f"cap не может быть отрицательным: {cap}")
    if not features or cap == 0:
        return []
    scores = np.array([f.score for f in features], dtype=np.float64)
    # lexsort: последний ключ главный
    order = np.lexsort((np.arange(len(features)), -scores))
    return [features[i] for i in order[:cap]]


def l2_norm_scores(descriptors: Sequence[np.ndarray]) -> List[float]:
    """Оценки ключевых точек как L2-норма ненормированного дескриптора"""
    if len(descriptors) == 0:
        raise InvalidInputError("Пустой список дескрипторов")
    dim = len(descriptors[0])
    for d in descriptors:
        if len(d) != dim:
            raise DimensionMismatchError(dim, len(d), "дескриптор")
    matrix = np.asarray(descriptors, dtype=np.float64).reshape(len(descriptors), dim)
    return np.linalg.norm(matrix, axis=1).tolist()


def apply_l2_norm_scores(image: ImageFeatures) -> ImageFeatures:
    """Записывает L2-нормы дескрипторов в оценки признаков"""
    if not image.features:
        return image
    scores = l2_norm_scores([f.descriptor for f in image.features])
    return image.with_features(f.with_score(s) for f, s in zip(image.features, scores))


def scale_schedule(min_scale: float = 0.25, max_scale: float = 2.0, factor: float = math.sqrt(2.0)) -> ScaleSchedule:
    """Геометрическая последовательность масштабов min·factor^i, не выше max"""
    if not (0 < min_scale <= max_scale) or not factor > 1:
        raise InvalidInputError(
            f"Некорректный диапазон масштабов: min={min_scale}, max={max_scale}, factor={factor}")
    limit = max_scale * (1 + 1e-9)
    scales = []
    i = 0
    while True:
        s = min_scale * factor ** i
        if s > limit:
            break
        # Конец диапазона фиксируется точно
        if abs(s - max_scale) <= max_scale * 1e-9:
            s = float(max_scale)
        scales.append(s)
        i += 1
    return ScaleSchedule(float(min_scale), float(max_scale), float(factor), tuple(scales))


def receptive_field_size(spec: ReceptiveFieldSpec, scale: float) -> int:
    """Размер рецептивного поля в пикселях исходного изображения (округление half-up)"""
    if not scale > 0:
        raise InvalidInputError(f"Масштаб должен быть положительным: {scale}")
    return int(math.floor(spec.base_size / scale + 0.5))


def feature_center(spec: ReceptiveFieldSpec, grid_index: Tuple[int, int], scale: float) -> Tuple[float, float]:
    """Центр ячейки сетки признаков в координатах исходного изображения"""
    row, col = grid_index
    if row < 0 or col < 0:
        raise InvalidInputError(f"Индекс сетки не может быть отрицательным: {grid_index}")
    if not scale > 0:
        raise InvalidInputError(f"Масштаб должен быть положительным: {scale}")
    return ((col + 0.5) * spec.base_stride / scale, (row + 0.5) * spec.base_stride / scale)


def merge_pyramid(levels: Sequence[Sequence[LocalFeature]]) -> List[LocalFeature]:
    """Склеивает списки признаков уровней пирамиды в порядке расписания масштабов"""
    merged: List[LocalFeature] = []
    for level in levels:
        merged.extend(level)
    return merged
