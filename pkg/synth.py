"""
Детерминированные синтетические данные: корпус достопримечательностей с геометками
и дистракторами, пары соответствий с известным аффинным преобразованием,
мешки признаков для обучения внимания
"""

import hashlib
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from attention import FeatureBag
from errors import InvalidInputError
from evaluation import GeoRecord
from feature_model import (ImageFeatures, LocalFeature, ReceptiveFieldSpec, feature_center,
                           merge_pyramid, scale_schedule)
from logger import engine_logger
from matcher import AffineModel, Correspondence

KM_PER_DEGREE = 6371.0 * math.pi / 180.0
# Сетка достопримечательностей: шаг в градусах и число в ряду
LANDMARK_SPACING_DEG = 1.0
LANDMARKS_PER_ROW = 10
LANDMARK_ORIGIN = (10.0, 10.0)
DISTRACTOR_ORIGIN = (-40.0, -60.0)
CLUTTER_STD = 0.3


@dataclass(frozen=True)
class SynthConfig:
    n_landmarks: int = 20
    images_per_landmark: int = 5
    queries_per_landmark: int = 1
    features_per_image: int = 60
    clutter_per_image: int = 15
    raw_dim: int = 64
    n_discriminative_dims: int = 48
    noise_sigma: float = 0.05
    distractor_queries: int = 10
    geo_spread_km: float = 1.0
    seed: int = 0
    rf: ReceptiveFieldSpec = field(default_factory=ReceptiveFieldSpec)
    min_scale: float = 0.25
    max_scale: float = 2.0
    scale_factor: float = math.sqrt(2.0)

    def __post_init__(self):
        for name in ('n_landmarks', 'images_per_landmark', 'features_per_image', 'raw_dim',
                     'n_discriminative_dims'):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"SynthConfig.{name} должен быть >= 1")
        for name in ('queries_per_landmark', 'clutter_per_image', 'distractor_queries'):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"SynthConfig.{name} не может быть отрицательным")
        if self.noise_sigma < 0 or self.geo_spread_km < 0:
            raise InvalidInputError("noise_sigma и geo_spread_km не могут быть отрицательными")
        if self.n_discriminative_dims > self.raw_dim:
            raise InvalidInputError("n_discriminative_dims больше raw_dim")

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> 'SynthConfig':
        return cls(n_landmarks=config['SYNTH_N_LANDMARKS'],
                   images_per_landmark=config['SYNTH_IMAGES_PER_LANDMARK'],
                   queries_per_landmark=config['SYNTH_QUERIES_PER_LANDMARK'],
                   features_per_image=config['SYNTH_FEATURES_PER_IMAGE'],
                   clutter_per_image=config['SYNTH_CLUTTER_PER_IMAGE'],
                   raw_dim=config['SYNTH_RAW_DIM'],
                   n_discriminative_dims=config['SYNTH_N_DISCRIMINATIVE_DIMS'],
                   noise_sigma=float(config['SYNTH_NOISE_SIGMA']),
                   distractor_queries=config['SYNTH_DISTRACTOR_QUERIES'],
                   geo_spread_km=float(config['SYNTH_GEO_SPREAD_KM']),
                   seed=config['SEED'],
                   rf=ReceptiveFieldSpec(config['RF_BASE_SIZE'], config['RF_BASE_STRIDE']),
                   min_scale=float(config['PYRAMID_MIN_SCALE']),
                   max_scale=float(config['PYRAMID_MAX_SCALE']),
                   scale_factor=float(config['PYRAMID_FACTOR']))


@dataclass(frozen=True, eq=False)
class LandmarkDataset:
    db: List[ImageFeatures]
    db_geo: List[GeoRecord]
    queries: List[ImageFeatures]
    query_geo: List[GeoRecord]
    labels: Dict[str, Optional[str]]            # query_id → landmark_id, None у дистракторов
    planted: Dict[str, np.ndarray]              # image_id → маска признаков-не-фона


@dataclass(frozen=True, eq=False)
class _Prototypes:
    descriptors: np.ndarray    # (P, raw_dim)
    locations: np.ndarray      # (P, 2) в системе координат эталонного снимка
    scales: np.ndarray         # (P,)


def _landmark_id(i: int) -> str:
    return f"lm_{i:03d}"


def _landmark_descriptor(config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    descriptor = np.zeros(config.raw_dim)
    descriptor[:config.n_discriminative_dims] = rng.normal(size=config.n_discriminative_dims)
    return descriptor


def _distractor_descriptor(config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Закон Лапласа на последних измерениях: распределение, не связанное с достопримечательностями"""
    descriptor = np.zeros(config.raw_dim)
    descriptor[config.raw_dim - config.n_discriminative_dims:] = rng.laplace(size=config.n_discriminative_dims)
    return descriptor


def _prototypes(config: SynthConfig, rng: np.random.Generator,
                draw: Callable[[SynthConfig, np.random.Generator], np.ndarray] = _landmark_descriptor
                ) -> _Prototypes:
    """Прототипы, разложенные по уровням пирамиды масштабов"""
    schedule = scale_schedule(config.min_scale, config.max_scale, config.scale_factor)
    levels = len(schedule.scales)
    per_level = [config.features_per_image // levels + (1 if i < config.features_per_image % levels else 0)
                 for i in range(levels)]

    pyramid = []
    for scale, count in zip(schedule.scales, per_level):
        side = max(8, math.ceil(math.sqrt(count)))
        cells = rng.choice(side * side, size=count, replace=False)
        level = []
        for cell in cells:
            descriptor = draw(config, rng)
            center = feature_center(config.rf, (int(cell) // side, int(cell) % side), scale)
            level.append(LocalFeature(descriptor=descriptor, location=center, scale=scale))
        pyramid.append(level)

    merged = merge_pyramid(pyramid)
    return _Prototypes(descriptors=np.vstack([f.descriptor for f in merged]),
                       locations=np.array([f.location for f in merged]),
                       scales=np.array([f.scale for f in merged]))


def _random_warp(rng: np.random.Generator) -> AffineModel:
    """Мягкое подобие: масштаб 0.8–1.25, поворот до 0.2 рад, сдвиг до 20 px"""
    s = math.exp(rng.uniform(math.log(0.8), math.log(1.25)))
    theta = rng.uniform(-0.2, 0.2)
    tx, ty = rng.uniform(-20.0, 20.0, size=2)
    c, n = s * math.cos(theta), s * math.sin(theta)
    return AffineModel(c, -n, n, c, float(tx), float(ty))


def _render_image(image_id: str, prototypes: _Prototypes, config: SynthConfig,
                  rng: np.random.Generator) -> Tuple[ImageFeatures, np.ndarray]:
    warp = _random_warp(rng)
    descriptors = prototypes.descriptors + config.noise_sigma * rng.normal(size=prototypes.descriptors.shape)
    locations = warp.apply(prototypes.locations)
    scale_change = math.sqrt(abs(warp.det))
    features = [LocalFeature(descriptor=d, location=(float(x), float(y)), scale=float(s * scale_change))
                for d, (x, y), s in zip(descriptors, locations, prototypes.scales)]

    extent = np.max(np.abs(locations), axis=0) + 1.0
    for _ in range(config.clutter_per_image):
        descriptor = CLUTTER_STD * rng.normal(size=config.raw_dim)
        x, y = rng.uniform(0.0, extent[0]), rng.uniform(0.0, extent[1])
        features.append(LocalFeature(descriptor=descriptor, location=(float(x), float(y)), scale=1.0))

    planted = np.zeros(len(features), dtype=bool)
    planted[:len(prototypes.descriptors)] = True
    order = rng.permutation(len(features))
    return ImageFeatures(image_id, tuple(features[i] for i in order)), planted[order]


def _geo_near(centre: Tuple[float, float], spread_km: float, rng: np.random.Generator) -> Tuple[float, float]:
    radius = spread_km * math.sqrt(rng.uniform())
    bearing = rng.uniform(0.0, 2 * math.pi)
    lat = centre[0] + radius * math.cos(bearing) / KM_PER_DEGREE
    lon = centre[1] + radius * math.sin(bearing) / (KM_PER_DEGREE * math.cos(math.radians(centre[0])))
    return lat, lon


def landmark_location(index: int) -> Tuple[float, float]:
    row, col = divmod(index, LANDMARKS_PER_ROW)
    return (LANDMARK_ORIGIN[0] + row * LANDMARK_SPACING_DEG, LANDMARK_ORIGIN[1] + col * LANDMARK_SPACING_DEG)


def gen_landmark_dataset(config: SynthConfig = SynthConfig()) -> LandmarkDataset:
    """
    Корпус: у каждой достопримечательности свой набор прототипов и геометка,
    снимки искажают прототипы шумом и аффинной деформацией положений.
    Дистракторы строятся из прототипов другого распределения и лежат далеко от всех.
    """
    rng = np.random.default_rng(config.seed)
    db, db_geo, queries, query_geo = [], [], [], []
    labels: Dict[str, Optional[str]] = {}
    planted: Dict[str, np.ndarray] = {}

    for i in range(config.n_landmarks):
        landmark = _landmark_id(i)
        centre = landmark_location(i)
        prototypes = _prototypes(config, rng)
        for k in range(config.images_per_landmark):
            image_id = f"db_{i:03d}_{k:03d}"
            image, mask = _render_image(image_id, prototypes, config, rng)
            lat, lon = _geo_near(centre, config.geo_spread_km, rng)
            db.append(image)
            db_geo.append(GeoRecord(image_id, lat, lon, landmark))
            planted[image_id] = mask
        for k in range(config.queries_per_landmark):
            query_id = f"q_{i:03d}_{k:02d}"
            image, mask = _render_image(query_id, prototypes, config, rng)
            lat, lon = _geo_near(centre, config.geo_spread_km, rng)
            queries.append(image)
            query_geo.append(GeoRecord(query_id, lat, lon))
            labels[query_id] = landmark
            planted[query_id] = mask

    for j in range(config.distractor_queries):
        query_id = f"dq_{j:03d}"
        image, mask = _render_image(query_id, _prototypes(config, rng, _distractor_descriptor), config, rng)
        row, col = divmod(j, LANDMARKS_PER_ROW)
        centre = (DISTRACTOR_ORIGIN[0] - row * LANDMARK_SPACING_DEG, DISTRACTOR_ORIGIN[1] + col * LANDMARK_SPACING_DEG)
        lat, lon = _geo_near(centre, config.geo_spread_km, rng)
        queries.append(image)
        query_geo.append(GeoRecord(query_id, lat, lon))
        labels[query_id] = None
        planted[query_id] = mask

    engine_logger.stage("gen", f"изображений базы {len(db)}, запросов {len(queries)} "
                               f"(дистракторов {config.distractor_queries})")
    return LandmarkDataset(db, db_geo, queries, query_geo, labels, planted)


def dataset_digest(dataset: LandmarkDataset) -> str:
    """SHA-256 канонического представления корпуса: массивы little-endian float64, геометки через repr"""
    digest = hashlib.sha256()
    for image in dataset.db + dataset.queries:
        digest.update(image.image_id.encode('utf-8'))
        for values in (image.descriptors(), image.locations(), image.scales()):
            digest.update(np.ascontiguousarray(values, dtype='<f8').tobytes())
        digest.update(np.asarray(dataset.planted[image.image_id], dtype=np.uint8).tobytes())
    for record in dataset.db_geo + dataset.query_geo:
        line = f"{record.image_id},{record.latitude!r},{record.longitude!r},{record.landmark_id}\n"
        digest.update(line.encode('utf-8'))
    for query_id in sorted(dataset.labels):
        digest.update(f"{query_id}={dataset.labels[query_id]}\n".encode('utf-8'))
    return digest.hexdigest()


def gen_geometry_pair(n_inliers: int, n_outliers: int, affine: AffineModel = AffineModel(1, 0, 0, 1, 0, 0),
                      noise_px: float = 0.0, seed: int = 0, frame: Tuple[float, float] = (1024.0, 768.0)
                      ) -> Tuple[List[Correspondence], np.ndarray]:
    """Соответствия с заложенным преобразованием и маской истинных инлайеров"""
    if n_inliers < 3:
        raise InvalidInputError(f"Нужно не меньше 3 инлайеров, запрошено {n_inliers}")
    if n_outliers < 0 or noise_px < 0:
        raise InvalidInputError("n_outliers и noise_px не могут быть отрицательными")
    rng = np.random.default_rng(seed)
    width, height = frame

    query_in = rng.uniform((0.0, 0.0), (width, height), size=(n_inliers, 2))
    db_in = affine.apply(query_in)
    if noise_px > 0:
        db_in = db_in + rng.normal(0.0, noise_px, size=db_in.shape)
    query_out = rng.uniform((0.0, 0.0), (width, height), size=(n_outliers, 2))
    db_out = rng.uniform((0.0, 0.0), (width, height), size=(n_outliers, 2))

    query = np.vstack([query_in, query_out])
    db = np.vstack([db_in, db_out])
    mask = np.concatenate([np.ones(n_inliers, dtype=bool), np.zeros(n_outliers, dtype=bool)])
    order = rng.permutation(n_inliers + n_outliers)
    correspondences = [Correspondence(tuple(query[i]), tuple(db[i])) for i in order]
    return correspondences, mask[order]


def _signatures(n_classes: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    raw = rng.normal(size=(dim, n_classes))
    if n_classes <= dim:
        q, _ = np.linalg.qr(raw)
        return q[:, :n_classes].T
    return (raw / np.linalg.norm(raw, axis=0)).T


def gen_classification_bags(n_classes: int = 3, bags_per_class: int = 50, features_per_bag: int = 20,
                            d: int = 16, discriminative_fraction: float = 0.25, seed: int = 0,
                            noise_sigma: float = 0.1, signal: float = 3.0
                            ) -> Tuple[List[FeatureBag], List[np.ndarray]]:
    """
    Мешки для слабого обучения: часть признаков несёт сигнатуру класса
    (signal · направление + шум), остальные содержат чистый шум N(0, 1).
    """
    if min(n_classes, bags_per_class, features_per_bag, d) < 1:
        raise InvalidInputError("Все счётчики должны быть >= 1")
    if not 0.0 <= discriminative_fraction <= 1.0:
        raise InvalidInputError(f"discriminative_fraction вне [0, 1]: {discriminative_fraction}")
    rng = np.random.default_rng(seed)
    signatures = signal * _signatures(n_classes, d, rng)
    n_planted = int(round(discriminative_fraction * features_per_bag))

    bags, masks = [], []
    for label in range(n_classes):
        for _ in range(bags_per_class):
            planted = signatures[label] + noise_sigma * rng.normal(size=(n_planted, d))
            noise = rng.normal(size=(features_per_bag - n_planted, d))
            features = np.vstack([planted, noise])
            mask = np.arange(features_per_bag) < n_planted
            order = rng.permutation(features_per_bag)
            bags.append(FeatureBag(features[order], label))
            masks.append(mask[order])
    return bags, masks


def bags_from_corpus(images: Sequence[ImageFeatures], landmark_of: Mapping[str, str]
                     ) -> Tuple[List[FeatureBag], List[str]]:
    """Слабая разметка: снимок базы становится мешком с меткой своей достопримечательности"""
    classes = sorted({landmark_of[image.image_id] for image in images if image.image_id in landmark_of})
    class_index = {name: i for i, name in enumerate(classes)}
    bags = [FeatureBag(image.descriptors(), class_index[landmark_of[image.image_id]])
            for image in images if image.image_id in landmark_of and len(image)]
    return bags, classes
