"""
Сборка этапов: оценка и отбор ключевых точек, сжатие PCA, поиск и проверка
"""

from typing import List, Optional, Sequence

import numpy as np

from attention import AttentionScorer, attach_scores
from errors import InsufficientDataError, InvalidInputError
from feature_model import ImageFeatures, SelectionPolicy, apply_l2_norm_scores, select_top_by_score
from index import RetrievalIndex, SearchParams, search_image
from linalg import PcaModel, l2_normalize_rows, pca_train, reduce_descriptors, snap_pca
from logger import engine_logger
from matcher import RansacParams, VerificationResult, rank_results


def score_image(image: ImageFeatures, policy: SelectionPolicy,
                scorer: Optional[AttentionScorer] = None) -> ImageFeatures:
    if policy is SelectionPolicy.ATTENTION:
        if scorer is None:
            raise InvalidInputError("Политика attention требует обученного чекпоинта")
        return attach_scores(scorer, image)
    return apply_l2_norm_scores(image)


def prepare_image(image: ImageFeatures, policy: SelectionPolicy, cap: int,
                  pca: Optional[PcaModel] = None, scorer: Optional[AttentionScorer] = None) -> ImageFeatures:
    """Оценка → отбор top-cap → (при наличии PCA) сжатие дескрипторов"""
    selected = image.with_features(select_top_by_score(score_image(image, policy, scorer).features, cap))
    if pca is None or not len(selected):
        return selected
    reduced = reduce_descriptors(pca, selected.descriptors())
    return selected.with_features(f.with_descriptor(d) for f, d in zip(selected.features, reduced))


def train_reduction(images: Sequence[ImageFeatures], out_dim: int) -> PcaModel:
    """PCA на L2-нормированных отобранных дескрипторах, параметры округлены до f32"""
    blocks = [image.descriptors() for image in images if len(image)]
    if not blocks:
        raise InsufficientDataError("Нет дескрипторов для обучения PCA")
    matrix = l2_normalize_rows(np.vstack(blocks))
    model = snap_pca(pca_train(matrix, out_dim))
    engine_logger.stage("train_reduction", f"{matrix.shape[1]} -> {out_dim} по {matrix.shape[0]} дескрипторам")
    return model


def verify_query(index: RetrievalIndex, query: ImageFeatures, search: SearchParams = SearchParams(),
                 ransac: RansacParams = RansacParams()) -> List[VerificationResult]:
    """Поиск соответствий по индексу и ранжирование по числу инлайеров"""
    candidates = search_image(index, query, search)
    return rank_results(candidates, ransac)
