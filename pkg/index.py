"""
Инвертированный индекс локальных дескрипторов: грубый словарь k-means,
KD-деревья ячеек с LOPQ в листьях и поиск ADC с мягким назначением
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from cell_tree import CellLeaf, CellTree
from errors import DimensionMismatchError, IndexStateError, InsufficientDataError, InvalidInputError
from feature_model import ImageFeatures
from linalg import KMeansModel, PcaModel, assign_batch, kmeans_train, snap_f32, snap_pca
from logger import engine_logger
from matcher import Correspondence
from metrics_manager import metrics_manager
from quantizer import LocalPq, PqCode, adc_distances, fallback_local_pq, lopq_train, train_residual_pq

# Байт на постинг сверх кода: u32 индекс изображения и u32 номер признака
POSTING_ID_BYTES = 8


def _check_positive(owner: str, **values):
    for name, value in values.items():
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
            raise InvalidInputError(f"{owner}.{name} должен быть целым >= 1: {value!r}")


@dataclass(frozen=True)
class IndexConfig:
    coarse_k: int = 8192
    kd_leaf_max: int = 30000
    pq_m: int = 10
    pq_bits: int = 5
    descriptor_dim: int = 40
    kmeans_iters: int = 20
    pq_iters: int = 15

    def __post_init__(self):
        _check_positive('IndexConfig', coarse_k=self.coarse_k, kd_leaf_max=self.kd_leaf_max,
                        pq_m=self.pq_m, pq_bits=self.pq_bits, descriptor_dim=self.descriptor_dim,
                        kmeans_iters=self.kmeans_iters, pq_iters=self.pq_iters)
        if self.descriptor_dim % self.pq_m != 0:
            raise InvalidInputError(
                f"descriptor_dim={self.descriptor_dim} не делится на pq_m={self.pq_m}")

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> 'IndexConfig':
        return cls(coarse_k=config['COARSE_K'], kd_leaf_max=config['KD_LEAF_MAX'],
                   pq_m=config['PQ_M'], pq_bits=config['PQ_BITS'],
                   descriptor_dim=config['DESCRIPTOR_DIM'],
                   kmeans_iters=config['KMEANS_ITERS'], pq_iters=config['PQ_ITERS'])

    @property
    def code_bytes(self) -> int:
        return (self.pq_m * self.pq_bits + 7) // 8


@dataclass(frozen=True)
class SearchParams:
    soft_assign: int = 5
    leaf_budget: int = 10000
    top_k: int = 60

    def __post_init__(self):
        _check_positive('SearchParams', soft_assign=self.soft_assign,
                        leaf_budget=self.leaf_budget, top_k=self.top_k)

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> 'SearchParams':
        return cls(soft_assign=config['SOFT_ASSIGN'], leaf_budget=config['LEAF_BUDGET'],
                   top_k=config['TOP_K'])


@dataclass(frozen=True)
class Posting:
    image_id: str
    feature_ordinal: int
    code: PqCode


@dataclass(frozen=True, eq=False)
class ImageEntry:
    image_id: str
    locations: np.ndarray   # (n, 2)
    scales: np.ndarray      # (n,)

    def __len__(self) -> int:
        return int(self.locations.shape[0])


@dataclass(eq=False)
class RetrievalIndex:
    config: IndexConfig
    coarse: Optional[KMeansModel]
    cells: List[CellTree]
    images: List[ImageEntry]            # отсортированы по image_id
    pca: Optional[PcaModel] = None
    fallback: Optional[LocalPq] = None  # общий PQ остатков для малых листьев

    @property
    def is_built(self) -> bool:
        return self.coarse is not None and self.posting_count > 0

    @property
    def posting_count(self) -> int:
        return sum(tree.posting_count for tree in self.cells)

    @property
    def leaf_count(self) -> int:
        return sum(tree.leaf_count for tree in self.cells)

    @property
    def image_ids(self) -> List[str]:
        return [entry.image_id for entry in self.images]

    def leaves(self):
        for tree in self.cells:
            yield from tree.leaves()


def _snap_split(value: float) -> float:
    return float(np.float32(value))


def _leaf_seed(seed: int, cell_id: int, leaf_number: int) -> int:
    return int(np.random.SeedSequence([seed, cell_id, leaf_number]).generate_state(1)[0])


def _build_cell(cell_id: int, rows: np.ndarray, vectors: np.ndarray, residuals: np.ndarray,
                image_idx: np.ndarray, ordinals: np.ndarray, centroid: np.ndarray,
                config: IndexConfig, fallback: LocalPq, seed: int) -> CellTree:
    if rows.size == 0:
        return CellTree([])
    cell_residuals = residuals[rows]

    def make_leaf(local_rows: np.ndarray, leaf_number: int) -> CellLeaf:
        local_rows = np.sort(local_rows)
        members = rows[local_rows]
        try:
            local_pq = lopq_train(vectors[members], centroid, m=config.pq_m, bits=config.pq_bits,
                                  seed=_leaf_seed(seed, cell_id, leaf_number), iters=config.pq_iters)
        except InsufficientDataError:
            local_pq = fallback
        return CellLeaf(local_pq=local_pq,
                        image_idx=image_idx[members].astype(np.uint32),
                        ordinals=ordinals[members].astype(np.uint32),
                        codes=local_pq.encode_residuals(cell_residuals[local_rows]))

    return CellTree.build(cell_residuals, config.kd_leaf_max, make_leaf, snap=_snap_split)


def build_index(corpus: Sequence[ImageFeatures], config: IndexConfig = IndexConfig(), seed: int = 0,
                pca: Optional[PcaModel] = None, workers: int = 1) -> RetrievalIndex:
    """
    Строит индекс по признакам корпуса (дескрипторы уже сжаты до descriptor_dim).
    Результат полностью определяется корпусом, конфигурацией и seed.
    """
    if not corpus:
        raise InvalidInputError("Пустой корпус")
    images = sorted(corpus, key=lambda image: image.image_id)
    ids = [image.image_id for image in images]
    if len(set(ids)) != len(ids):
        raise InvalidInputError("Повторяющиеся image_id в корпусе")

    blocks, image_idx, ordinals = [], [], []
    for position, image in enumerate(images):
        if not len(image):
            continue
        if image.dim != config.descriptor_dim:
            raise DimensionMismatchError(config.descriptor_dim, image.dim, f"дескрипторы {image.image_id}")
        blocks.append(image.descriptors())
        image_idx.append(np.full(len(image), position, dtype=np.int64))
        ordinals.append(np.arange(len(image), dtype=np.int64))
    if not blocks:
        raise InvalidInputError("В корпусе нет ни одного признака")

    vectors = np.vstack(blocks)
    image_idx = np.concatenate(image_idx)
    ordinals = np.concatenate(ordinals)

    with metrics_manager.timed('build_index'):
        distinct = int(np.unique(vectors, axis=0).shape[0])
        k = min(config.coarse_k, distinct)
        if k < config.coarse_k:
            engine_logger.info(f"Грубый словарь урезан до {k} (различных точек: {distinct})")
        trained = kmeans_train(vectors, k, max_iters=config.kmeans_iters, seed=seed)
        coarse = KMeansModel(centroids=snap_f32(trained.centroids), inertia=trained.inertia,
                             inertia_trace=trained.inertia_trace)
        labels, _ = assign_batch(vectors, coarse.centroids)
        residuals = vectors - coarse.centroids[labels]

        global_pq = train_residual_pq(residuals, config.pq_m, config.pq_bits, config.pq_iters, seed)
        fallback = fallback_local_pq(global_pq)

        members = [np.flatnonzero(labels == c) for c in range(k)]

        def build(cell_id: int) -> CellTree:
            return _build_cell(cell_id, members[cell_id], vectors, residuals, image_idx, ordinals,
                               coarse.centroids[cell_id], config, fallback, seed)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                cells = list(pool.map(build, range(k)))
        else:
            cells = [build(c) for c in range(k)]

    table = [ImageEntry(image.image_id, snap_f32(image.locations()), snap_f32(image.scales()))
             for image in images]
    index = RetrievalIndex(config=config, coarse=coarse, cells=cells, images=table,
                           pca=snap_pca(pca) if pca is not None else None, fallback=fallback)
    engine_logger.stage("build_index", f"изображений {len(table)}, постингов {index.posting_count}, "
                                       f"ячеек {k}, листьев {index.leaf_count}")
    metrics_manager.record_memory('build_index')
    return index


def soft_assign(coarse: KMeansModel, query, t: int) -> List[Tuple[int, float]]:
    """t ближайших центроидов по возрастанию расстояния, при равенстве меньший id"""
    vector = np.asarray(query, dtype=np.float64)
    if vector.ndim != 1 or vector.shape[0] != coarse.dim:
        raise DimensionMismatchError(coarse.dim, int(vector.size), "запрос")
    if t < 1 or t > coarse.k:
        raise InvalidInputError(f"t={t} вне диапазона [1, {coarse.k}]")
    diff = coarse.centroids - vector
    d2 = np.einsum('ij,ij->i', diff, diff)
    order = np.lexsort((np.arange(coarse.k), d2))[:t]
    return [(int(c), float(d2[c])) for c in order]


@dataclass(frozen=True, eq=False)
class _Hits:
    distances: np.ndarray
    image_idx: np.ndarray
    ordinals: np.ndarray
    leaves: List[CellLeaf]
    leaf_of: np.ndarray
    row_of: np.ndarray

    def __len__(self) -> int:
        return int(self.distances.shape[0])


def _search(index: RetrievalIndex, query, params: SearchParams) -> _Hits:
    if not index.is_built:
        raise IndexStateError("Индекс не построен")
    vector = np.asarray(query, dtype=np.float64)
    if vector.ndim != 1 or vector.shape[0] != index.config.descriptor_dim:
        raise DimensionMismatchError(index.config.descriptor_dim, int(vector.size), "запрос")

    nearest_cells = soft_assign(index.coarse, vector, min(params.soft_assign, index.coarse.k))
    budget = params.leaf_budget
    distances, image_idx, ordinals, leaf_of, row_of = [], [], [], [], []
    leaves: List[CellLeaf] = []

    for cell_id, _ in nearest_cells:
        if budget <= 0:
            break
        residual = vector - index.coarse.centroids[cell_id]
        for _, leaf in index.cells[cell_id].best_first(residual):
            if budget <= 0:
                break
            budget -= 1
            table = leaf.local_pq.adc_table(residual)
            distances.append(adc_distances(table, leaf.indices))
            image_idx.append(leaf.image_idx)
            ordinals.append(leaf.ordinals)
            leaf_of.append(np.full(len(leaf), len(leaves), dtype=np.int64))
            row_of.append(np.arange(len(leaf), dtype=np.int64))
            leaves.append(leaf)

    if not distances:
        empty = np.zeros(0)
        return _Hits(empty, empty.astype(np.uint32), empty.astype(np.uint32), [], empty.astype(np.int64),
                     empty.astype(np.int64))

    distances = np.concatenate(distances)
    image_idx = np.concatenate(image_idx)
    ordinals = np.concatenate(ordinals)
    # Таблица изображений отсортирована по id, поэтому индекс упорядочен как image_id
    order = np.lexsort((ordinals, image_idx, distances))[:params.top_k]
    return _Hits(distances[order], image_idx[order], ordinals[order], leaves,
                 np.concatenate(leaf_of)[order], np.concatenate(row_of)[order])


def search_descriptor(index: RetrievalIndex, query, params: SearchParams = SearchParams()
                      ) -> List[Tuple[Posting, float]]:
    """Глобальный top_k постингов по расстоянию ADC"""
    hits = _search(index, query, params)
    results = []
    for i in range(len(hits)):
        leaf = hits.leaves[hits.leaf_of[i]]
        posting = Posting(image_id=index.images[hits.image_idx[i]].image_id,
                          feature_ordinal=int(hits.ordinals[i]),
                          code=PqCode(leaf.codes[hits.row_of[i]].tobytes()))
        results.append((posting, float(hits.distances[i])))
    return results


def search_image(index: RetrievalIndex, query_features: ImageFeatures,
                 params: SearchParams = SearchParams()) -> Dict[str, List[Correspondence]]:
    """
    Ищет каждый признак запроса и собирает совпадения по изображениям базы.
    Соответствие связывает положение признака запроса с положением признака базы.
    """
    grouped: Dict[int, List[Correspondence]] = {}
    for feature in query_features.features:
        hits = _search(index, feature.descriptor, params)
        for i in range(len(hits)):
            position = int(hits.image_idx[i])
            entry = index.images[position]
            x, y = entry.locations[hits.ordinals[i]]
            grouped.setdefault(position, []).append(
                Correspondence(query_point=feature.location, db_point=(float(x), float(y))))
    return {index.images[position].image_id: grouped[position] for position in sorted(grouped)}


def _histogram_bucket(size: int) -> str:
    low = 1 << (max(size, 1).bit_length() - 1)
    return f"{low}-{2 * low - 1}"


def build_stats(index: RetrievalIndex) -> Dict[str, Any]:
    """Сводка индекса: постинги, листья, гистограмма размеров листьев и объём хранения"""
    sizes = [len(leaf) for leaf in index.leaves()]
    histogram: Dict[str, int] = {}
    for size in sorted(sizes):
        bucket = _histogram_bucket(size)
        histogram[bucket] = histogram.get(bucket, 0) + 1

    postings = index.posting_count
    code_bytes = index.config.code_bytes
    leaf_models = {id(leaf.local_pq): leaf.local_pq for leaf in index.leaves()}
    model_bytes = sum(4 * (lpq.rotation.size + lpq.pq.codebooks.size) for lpq in leaf_models.values())
    if index.coarse is not None:
        model_bytes += 4 * index.coarse.centroids.size
    posting_bytes = postings * (code_bytes + POSTING_ID_BYTES)

    return {
        'images': len(index.images),
        'postings': postings,
        'coarse_k': index.coarse.k if index.coarse is not None else 0,
        'nonempty_cells': sum(1 for tree in index.cells if tree.posting_count),
        'leaves': len(sizes),
        'fallback_leaves': sum(1 for leaf in index.leaves() if leaf.local_pq.fallback),
        'max_leaf_postings': max(sizes) if sizes else 0,
        'leaf_size_histogram': histogram,
        'code_bits': index.config.pq_m * index.config.pq_bits,
        'code_bytes': code_bytes,
        'bytes_per_descriptor': code_bytes + POSTING_ID_BYTES,
        'total_bytes_per_descriptor': (posting_bytes + model_bytes) / postings if postings else 0.0,
    }
