"""
Оценка внимания для локальных признаков: двухслойный перцептрон с softplus,
классификатор над взвешенной суммой признаков и обучение SGD
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from binary_io import BinaryReader, BinaryWriter, read_bytes, write_bytes
from errors import DimensionMismatchError, FormatError, InvalidInputError
from feature_model import ImageFeatures
from logger import engine_logger
from metrics_manager import metrics_manager

CHECKPOINT_MAGIC = b'DATT'
CHECKPOINT_VERSION = 1
# Множитель начальных весов первого слоя: оценка до обучения почти постоянна
W1_INIT_GAIN = 0.01


@dataclass(eq=False)
class AttentionScorer:
    w1: np.ndarray    # (h, d)
    b1: np.ndarray    # (h,)
    w2: np.ndarray    # (h,)
    b2: float

    @property
    def dim(self) -> int:
        return int(self.w1.shape[1])

    @property
    def hidden(self) -> int:
        return int(self.w1.shape[0])

    @classmethod
    def zeros(cls, dim: int, hidden: int = 32) -> 'AttentionScorer':
        return cls(np.zeros((hidden, dim)), np.zeros(hidden), np.zeros(hidden), 0.0)

    @classmethod
    def initialize(cls, dim: int, hidden: int, rng: np.random.Generator) -> 'AttentionScorer':
        return cls(w1=rng.normal(0.0, W1_INIT_GAIN / math.sqrt(dim), size=(hidden, dim)),
                   b1=np.zeros(hidden),
                   w2=rng.normal(0.0, 1.0 / math.sqrt(hidden), size=hidden),
                   b2=0.0)

    def copy(self) -> 'AttentionScorer':
        return AttentionScorer(self.w1.copy(), self.b1.copy(), self.w2.copy(), float(self.b2))


@dataclass(eq=False)
class Classifier:
    weights: np.ndarray   # (M, d), без смещения

    @property
    def n_classes(self) -> int:
        return int(self.weights.shape[0])


@dataclass(frozen=True, eq=False)
class FeatureBag:
    features: np.ndarray   # (N, d)
    label: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] < 1:
            raise InvalidInputError("Мешок признаков должен содержать хотя бы один признак")
        if self.label < 0:
            raise InvalidInputError(f"Метка класса отрицательна: {self.label}")
        object.__setattr__(self, 'features', features)
        object.__setattr__(self, 'label', int(self.label))


@dataclass(frozen=True, eq=False)
class Gradients:
    d_w1: np.ndarray
    d_b1: np.ndarray
    d_w2: np.ndarray
    d_b2: float
    d_W: np.ndarray

    def norm(self) -> float:
        return math.sqrt(sum(float(np.sum(np.square(g))) for g in (self.d_w1, self.d_b1, self.d_w2, self.d_W))
                         + self.d_b2 ** 2)


@dataclass(frozen=True, eq=False)
class ForwardCache:
    features: np.ndarray
    pre_hidden: np.ndarray
    hidden: np.ndarray
    pre_score: np.ndarray
    alpha: np.ndarray
    pooled: np.ndarray
    logits: np.ndarray
    probabilities: np.ndarray
    scorer: AttentionScorer
    classifier: Classifier


def softplus(x):
    """ln(1 + e^x) в устойчивой форме"""
    values = np.asarray(x, dtype=np.float64)
    result = np.maximum(values, 0.0) + np.log1p(np.exp(-np.abs(values)))
    return float(result) if result.ndim == 0 else result


def sigmoid(x):
    values = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(values))
    result = np.where(values >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(result) if result.ndim == 0 else result


def _as_features(scorer: AttentionScorer, features) -> np.ndarray:
    matrix = np.asarray(features, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix.reshape(1, -1)
    if matrix.ndim != 2 or matrix.shape[1] != scorer.dim:
        raise DimensionMismatchError(scorer.dim, int(matrix.shape[-1]), "признаки внимания")
    return matrix


def score_features(scorer: AttentionScorer, features) -> np.ndarray:
    """α_n = softplus(w2 · relu(W1 f_n + b1) + b2), независимо по признакам"""
    matrix = _as_features(scorer, features)
    hidden = np.maximum(matrix @ scorer.w1.T + scorer.b1, 0.0)
    return softplus(hidden @ scorer.w2 + scorer.b2).reshape(-1)


def _log_sum_exp(values: np.ndarray) -> float:
    top = float(np.max(values))
    return top + math.log(float(np.sum(np.exp(values - top))))


def forward(scorer: AttentionScorer, classifier: Classifier, bag: FeatureBag
            ) -> Tuple[np.ndarray, float, ForwardCache]:
    """Логиты y = W · Σ α_n f_n и перекрёстная энтропия для метки мешка"""
    features = _as_features(scorer, bag.features)
    if classifier.weights.shape[1] != scorer.dim:
        raise DimensionMismatchError(scorer.dim, int(classifier.weights.shape[1]), "классификатор")
    if bag.label >= classifier.n_classes:
        raise InvalidInputError(f"Метка {bag.label} вне [0, {classifier.n_classes})")

    pre_hidden = features @ scorer.w1.T + scorer.b1
    hidden = np.maximum(pre_hidden, 0.0)
    pre_score = hidden @ scorer.w2 + scorer.b2
    alpha = softplus(pre_score).reshape(-1)
    pooled = alpha @ features
    logits = classifier.weights @ pooled
    lse = _log_sum_exp(logits)
    loss = lse - float(logits[bag.label])
    probabilities = np.exp(logits - lse)
    cache = ForwardCache(features, pre_hidden, hidden, np.asarray(pre_score).reshape(-1), alpha, pooled,
                         logits, probabilities, scorer, classifier)
    return logits, loss, cache


def backward(cache: ForwardCache, label: int) -> Gradients:
    d_logits = cache.probabilities.copy()
    d_logits[label] -= 1.0
    d_W = np.outer(d_logits, cache.pooled)
    d_pooled = cache.classifier.weights.T @ d_logits
    d_alpha = cache.features @ d_pooled
    d_score = d_alpha * sigmoid(cache.pre_score)
    d_w2 = cache.hidden.T @ d_score
    d_b2 = float(np.sum(d_score))
    d_pre_hidden = np.outer(d_score, cache.scorer.w2) * (cache.pre_hidden > 0)
    d_w1 = d_pre_hidden.T @ cache.features
    d_b1 = d_pre_hidden.sum(axis=0)
    return Gradients(d_w1=d_w1, d_b1=d_b1, d_w2=d_w2, d_b2=d_b2, d_W=d_W)


def _dataset_loss(scorer: AttentionScorer, classifier: Classifier, bags: Sequence[FeatureBag]) -> float:
    return math.fsum(forward(scorer, classifier, bag)[1] for bag in bags) / len(bags)


def train_attention(bags: Sequence[FeatureBag], hidden: int = 32, lr: float = 0.05, steps: int = 500,
                    seed: int = 0, n_classes: Optional[int] = None, clip_norm: Optional[float] = None
                    ) -> Tuple[AttentionScorer, Classifier, List[float]]:
    """
    SGD по одному мешку; дескрипторы остаются неизменными, обучаются только
    оценка внимания и классификатор. Трасса: средняя потеря по набору
    до обучения и после каждой эпохи. clip_norm ограничивает норму шага
    (по умолчанию отключено).
    """
    if not bags:
        raise InvalidInputError("Пустой обучающий набор")
    labels = {bag.label for bag in bags}
    if len(labels) < 2:
        raise InvalidInputError("Для обучения нужно не меньше двух классов")
    dim = bags[0].features.shape[1]
    for bag in bags:
        if bag.features.shape[1] != dim:
            raise DimensionMismatchError(dim, bag.features.shape[1], "мешок признаков")
    n_classes = n_classes or max(labels) + 1
    if lr < 0 or steps < 0 or hidden < 1:
        raise InvalidInputError(f"Некорректные гиперпараметры: lr={lr}, steps={steps}, hidden={hidden}")

    rng = np.random.default_rng(seed)
    scorer = AttentionScorer.initialize(dim, hidden, rng)
    classifier = Classifier(rng.normal(0.0, 0.01, size=(n_classes, dim)))
    trace = [_dataset_loss(scorer, classifier, bags)]

    with metrics_manager.timed('train_attention'):
        step = 0
        while step < steps:
            for position in rng.permutation(len(bags)):
                if step >= steps:
                    break
                bag = bags[position]
                _, _, cache = forward(scorer, classifier, bag)
                grads = backward(cache, bag.label)
                scale = lr
                if clip_norm is not None:
                    norm = grads.norm()
                    if norm > clip_norm:
                        scale = lr * clip_norm / norm
                scorer.w1 -= scale * grads.d_w1
                scorer.b1 -= scale * grads.d_b1
                scorer.w2 -= scale * grads.d_w2
                scorer.b2 -= scale * grads.d_b2
                classifier.weights -= scale * grads.d_W
                step += 1
            trace.append(_dataset_loss(scorer, classifier, bags))

    engine_logger.stage("train_attention", f"шагов {steps}, потеря {trace[0]:.4f} -> {trace[-1]:.4f}")
    return scorer, classifier, trace


def predict(scorer: AttentionScorer, classifier: Classifier, features) -> int:
    matrix = _as_features(scorer, features)
    logits = classifier.weights @ (score_features(scorer, matrix) @ matrix)
    return int(np.argmax(logits))


def training_accuracy(scorer: AttentionScorer, classifier: Classifier, bags: Sequence[FeatureBag]) -> float:
    if not bags:
        raise InvalidInputError("Пустой набор мешков")
    correct = sum(1 for bag in bags if predict(scorer, classifier, bag.features) == bag.label)
    return correct / len(bags)


def attach_scores(scorer: AttentionScorer, image: ImageFeatures) -> ImageFeatures:
    """Записывает α в оценки признаков изображения (дескрипторы ещё не сжаты)"""
    if not len(image):
        return image
    alpha = score_features(scorer, image.descriptors())
    return image.with_features(f.with_score(a) for f, a in zip(image.features, alpha))


def serialize_checkpoint(scorer: AttentionScorer, classifier: Classifier) -> bytes:
    writer = BinaryWriter()
    writer.magic(CHECKPOINT_MAGIC)
    writer.u32(CHECKPOINT_VERSION)
    writer.u32(scorer.dim)
    writer.u32(scorer.hidden)
    writer.u32(classifier.n_classes)
    writer.array(scorer.w1, '<f8')
    writer.array(scorer.b1, '<f8')
    writer.array(scorer.w2, '<f8')
    writer.array(np.array([scorer.b2]), '<f8')
    writer.array(classifier.weights, '<f8')
    return writer.getvalue()


def deserialize_checkpoint(data: bytes) -> Tuple[AttentionScorer, Classifier]:
    reader = BinaryReader(data)
    reader.magic(CHECKPOINT_MAGIC)
    reader.version(CHECKPOINT_VERSION)
    dim, hidden, n_classes = reader.u32('dim'), reader.u32('hidden'), reader.u32('classes')
    if min(dim, hidden, n_classes) < 1:
        raise FormatError('dims', f"некорректные размеры d={dim}, h={hidden}, M={n_classes}")
    w1 = reader.array(hidden * dim, '<f8', 'w1').reshape(hidden, dim)
    b1 = reader.array(hidden, '<f8', 'b1')
    w2 = reader.array(hidden, '<f8', 'w2')
    b2 = float(reader.array(1, '<f8', 'b2')[0])
    weights = reader.array(n_classes * dim, '<f8', 'W').reshape(n_classes, dim)
    reader.finish()
    return AttentionScorer(w1, b1, w2, b2), Classifier(weights)


def save_checkpoint(path: str, scorer: AttentionScorer, classifier: Classifier):
    write_bytes(path, serialize_checkpoint(scorer, classifier))
    engine_logger.info(f"Чекпоинт внимания сохранён: {path}")


def load_checkpoint(path: str) -> Tuple[AttentionScorer, Classifier]:
    return deserialize_checkpoint(read_bytes(path))
