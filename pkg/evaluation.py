"""
Оценка качества поиска: разметка по геометкам, кривые точность/полнота,
mAP, поздняя фузия с глобальными оценками
"""

import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from errors import InvalidInputError
from logger import engine_logger

EARTH_RADIUS_KM = 6371.0


@dataclass(frozen=True)
class GeoRecord:
    image_id: str
    latitude: float
    longitude: float
    landmark_id: Optional[str] = None

    def __post_init__(self):
        _check_coordinates(self.latitude, self.longitude)


@dataclass(frozen=True)
class GroundTruth:
    relevant: Dict[str, FrozenSet[str]]               # query_id → достопримечательности
    landmark_of: Dict[str, str]                       # image_id базы → достопримечательность
    centroids: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    landmark_sizes: Dict[str, int] = field(default_factory=dict)

    def is_distractor(self, query_id: str) -> bool:
        return not self.relevant.get(query_id)

    def ground_truth_count(self, query_id: str) -> int:
        """Число изображений базы, относящихся к релевантным достопримечательностям запроса"""
        return sum(self.landmark_sizes.get(landmark, 0) for landmark in self.relevant.get(query_id, ()))

    @property
    def evaluable_queries(self) -> List[str]:
        return sorted(q for q, landmarks in self.relevant.items() if landmarks)

    @property
    def distractor_queries(self) -> List[str]:
        return sorted(q for q, landmarks in self.relevant.items() if not landmarks)


@dataclass(frozen=True)
class RetrievalRun:
    results: Dict[str, List[Tuple[str, float]]]

    def __post_init__(self):
        for query_id, items in self.results.items():
            for image_id, score in items:
                if not math.isfinite(score):
                    raise InvalidInputError(f"Нечисловая оценка {score} для {query_id}/{image_id}")

    def ranked(self, query_id: str) -> List[Tuple[str, float]]:
        """Результаты запроса по убыванию оценки, при равенстве по image_id"""
        return sorted(self.results.get(query_id, []), key=lambda item: (-item[1], item[0]))


@dataclass(frozen=True)
class PrPoint:
    threshold: float
    precision: float
    recall: int
    normalized_recall: float = 0.0


def _check_coordinates(lat: float, lon: float):
    if not (math.isfinite(lat) and math.isfinite(lon)) or abs(lat) > 90 or abs(lon) > 180:
        raise InvalidInputError(f"Координаты вне диапазона: ({lat}, {lon})")


def haversine_km(a: Tuple[float, float], b: Tuple[float, float]) -> float:
    (lat1, lon1), (lat2, lon2) = a, b
    _check_coordinates(lat1, lon1)
    _check_coordinates(lat2, lon2)
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    d_phi = phi2 - phi1
    d_lambda = math.radians(lon2 - lon1)
    h = math.sin(d_phi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(d_lambda / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def build_ground_truth(records: Sequence[GeoRecord], query_records: Sequence[GeoRecord],
                       threshold_km: float = 25.0, min_photos: int = 3) -> GroundTruth:
    """
    Запрос релевантен достопримечательности, если он ближе threshold_km к центру
    её снимков. Достопримечательности с числом снимков меньше min_photos не учитываются.
    """
    if not records:
        raise InvalidInputError("Пустая база геометок")
    members: Dict[str, List[GeoRecord]] = {}
    landmark_of: Dict[str, str] = {}
    for record in records:
        if record.landmark_id is None:
            raise InvalidInputError(f"У изображения базы {record.image_id} нет landmark_id")
        members.setdefault(record.landmark_id, []).append(record)
        landmark_of[record.image_id] = record.landmark_id

    centroids: Dict[str, Tuple[float, float]] = {}
    sizes: Dict[str, int] = {}
    for landmark in sorted(members):
        photos = members[landmark]
        if len(photos) < min_photos:
            continue
        centroids[landmark] = (sum(r.latitude for r in photos) / len(photos),
                               sum(r.longitude for r in photos) / len(photos))
        sizes[landmark] = len(photos)

    relevant: Dict[str, FrozenSet[str]] = {}
    for query in query_records:
        point = (query.latitude, query.longitude)
        relevant[query.image_id] = frozenset(
            landmark for landmark, centre in centroids.items() if haversine_km(point, centre) < threshold_km)

    dropped = len(members) - len(centroids)
    engine_logger.debug(f"Разметка: достопримечательностей {len(centroids)}, отброшено {dropped}, "
                        f"дистракторов {sum(1 for v in relevant.values() if not v)}")
    return GroundTruth(relevant=relevant, landmark_of=landmark_of, centroids=centroids, landmark_sizes=sizes)


def dedup_top_per_landmark(results: Sequence[Tuple[str, float]], landmark_of: Mapping[str, str]
                           ) -> List[Tuple[str, float]]:
    """Оставляет лучший снимок каждой достопримечательности"""
    best: Dict[str, Tuple[str, float]] = {}
    for image_id, score in results:
        if image_id not in landmark_of:
            raise InvalidInputError(f"Неизвестное изображение: {image_id}")
        landmark = landmark_of[image_id]
        current = best.get(landmark)
        if current is None or (-score, image_id) < (-current[1], current[0]):
            best[landmark] = (image_id, score)
    return sorted(best.values(), key=lambda item: (-item[1], item[0]))


def dedup_run(run: RetrievalRun, landmark_of: Mapping[str, str]) -> RetrievalRun:
    return RetrievalRun({q: dedup_top_per_landmark(items, landmark_of) for q, items in run.results.items()})


def _is_true_positive(gt: GroundTruth, query_id: str, image_id: str) -> bool:
    landmark = gt.landmark_of.get(image_id)
    return landmark is not None and landmark in gt.relevant.get(query_id, frozenset())


def pr_sweep(run: RetrievalRun, gt: GroundTruth) -> List[PrPoint]:
    """
    Точность и ненормированная полнота по всем запросам сразу для каждого
    порога из множества оценок (по убыванию).
    """
    entries = [(score, _is_true_positive(gt, query_id, image_id))
               for query_id, items in run.results.items() for image_id, score in items]
    if not entries:
        return []
    scores = np.array([score for score, _ in entries])
    positives = np.array([tp for _, tp in entries], dtype=np.int64)
    order = np.argsort(-scores, kind='stable')
    scores, positives = scores[order], positives[order]
    retrieved = np.arange(1, scores.size + 1)
    true_positives = np.cumsum(positives)

    total_relevant = sum(gt.ground_truth_count(q) for q in gt.evaluable_queries)
    points = []
    # Последний элемент каждой группы равных оценок
    last_of_group = np.flatnonzero(np.append(scores[1:] != scores[:-1], True))
    for i in last_of_group:
        tp = int(true_positives[i])
        points.append(PrPoint(threshold=float(scores[i]),
                              precision=tp / int(retrieved[i]),
                              recall=tp,
                              normalized_recall=tp / total_relevant if total_relevant else 0.0))
    return points


def recall_at_precision(points: Sequence[PrPoint], target: float = 0.9) -> int:
    """Наибольшая ненормированная полнота среди точек с точностью не ниже target"""
    eligible = [p.recall for p in points if p.precision >= target]
    return max(eligible) if eligible else 0


def average_precision(ranked: Sequence[Tuple[str, float]], gt: GroundTruth, query_id: str) -> float:
    relevant_total = gt.ground_truth_count(query_id)
    if relevant_total == 0:
        raise InvalidInputError(f"У запроса {query_id} нет релевантных изображений")
    hits, precision_sum = 0, 0.0
    for rank, (image_id, _) in enumerate(ranked, start=1):
        if _is_true_positive(gt, query_id, image_id):
            hits += 1
            precision_sum += hits / rank
    return precision_sum / relevant_total


def mean_average_precision(run: RetrievalRun, gt: GroundTruth) -> float:
    queries = gt.evaluable_queries
    if not queries:
        raise InvalidInputError("Нет запросов с релевантными изображениями")
    return math.fsum(average_precision(run.ranked(q), gt, q) for q in queries) / len(queries)


def _min_max(scores: Mapping[str, float]) -> Dict[str, float]:
    if not scores:
        return {}
    low, high = min(scores.values()), max(scores.values())
    if high == low:
        return {image_id: 0.0 for image_id in scores}
    return {image_id: (value - low) / (high - low) for image_id, value in scores.items()}


def late_fusion(local_run: RetrievalRun, global_run: RetrievalRun, weight: float = 0.25) -> RetrievalRun:
    """
    Взвешенное среднее нормированных оценок: weight·local + (1 − weight)·global.
    Каждый источник нормируется min-max в пределах запроса, отсутствующие пары равны 0.
    """
    if not 0.0 <= weight <= 1.0:
        raise InvalidInputError(f"Вес фузии вне [0, 1]: {weight}")
    fused: Dict[str, List[Tuple[str, float]]] = {}
    for query_id in sorted(set(local_run.results) | set(global_run.results)):
        local = dict(local_run.results.get(query_id, []))
        global_ = dict(global_run.results.get(query_id, []))
        universe = sorted(set(local) | set(global_))
        local_norm = _min_max({i: local.get(i, 0.0) for i in universe})
        global_norm = _min_max({i: global_.get(i, 0.0) for i in universe})
        items = [(i, weight * local_norm[i] + (1.0 - weight) * global_norm[i]) for i in universe]
        fused[query_id] = sorted(items, key=lambda item: (-item[1], item[0]))
    return RetrievalRun(fused)


def roc_auc(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """Площадь под ROC через статистику Манна–Уитни, равные оценки делят ранг"""
    values = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(labels, dtype=bool)
    n_pos, n_neg = int(positive.sum()), int((~positive).sum())
    if n_pos == 0 or n_neg == 0:
        raise InvalidInputError("Для AUC нужны оба класса")
    order = np.argsort(values, kind='stable')
    sorted_values = values[order]
    ranks = np.empty(values.size)
    start = 0
    while start < values.size:
        end = start
        while end + 1 < values.size and sorted_values[end + 1] == sorted_values[start]:
            end += 1
        ranks[order[start:end + 1]] = 0.5 * (start + end) + 1.0
        start = end + 1
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def distractor_rejection_rate(run: RetrievalRun, gt: GroundTruth) -> float:
    """Доля запросов-дистракторов, для которых ничего не найдено"""
    distractors = gt.distractor_queries
    if not distractors:
        raise InvalidInputError("В разметке нет запросов-дистракторов")
    rejected = sum(1 for q in distractors if not run.results.get(q))
    return rejected / len(distractors)
