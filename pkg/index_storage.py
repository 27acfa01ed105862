"""
Сохранение и загрузка индекса в бинарном формате DIDX (little-endian,
счётчики u64, вещественные числа f32)
"""

from typing import List, Optional

import numpy as np

from binary_io import BinaryReader, BinaryWriter, read_bytes, write_bytes
from cell_tree import CellLeaf, CellNode, CellTree
from errors import FormatError, IndexStateError
from index import ImageEntry, IndexConfig, RetrievalIndex
from linalg import KMeansModel, PcaModel
from logger import engine_logger
from quantizer import LocalPq, ProductQuantizer

INDEX_MAGIC = b'DIDX'
INDEX_VERSION = 1

NODE_INTERNAL = 0
NODE_LEAF = 1

_CONFIG_FIELDS = ('coarse_k', 'kd_leaf_max', 'pq_m', 'pq_bits', 'descriptor_dim', 'kmeans_iters', 'pq_iters')


def _write_pq(writer: BinaryWriter, pq: ProductQuantizer):
    writer.u64(pq.m)
    writer.u64(pq.bits)
    writer.u64(pq.sub_dim)
    writer.array(pq.codebooks, '<f4')
    writer.u64(len(pq.training_trace))
    writer.array(np.asarray(pq.training_trace), '<f4')


def _read_pq(reader: BinaryReader, field: str) -> ProductQuantizer:
    m = reader.u64(f'{field}.m')
    bits = reader.u64(f'{field}.bits')
    sub_dim = reader.u64(f'{field}.sub_dim')
    if not 1 <= bits <= 16 or m < 1 or sub_dim < 1:
        raise FormatError(field, f"некорректные параметры PQ m={m}, bits={bits}, sub_dim={sub_dim}")
    ksub = 1 << bits
    codebooks = reader.array(m * ksub * sub_dim, '<f4', f'{field}.codebooks').astype(np.float64)
    trace_len = reader.u64(f'{field}.trace')
    trace = reader.array(trace_len, '<f4', f'{field}.trace').astype(np.float64)
    return ProductQuantizer(m=m, bits=bits, codebooks=codebooks.reshape(m, ksub, sub_dim),
                            training_trace=tuple(trace.tolist()))


def _write_leaf(writer: BinaryWriter, leaf: CellLeaf):
    writer.u8(1 if leaf.local_pq.fallback else 0)
    if not leaf.local_pq.fallback:
        writer.array(leaf.local_pq.storage_rotation, '<f4')
        _write_pq(writer, leaf.local_pq.pq)
    writer.u64(len(leaf))
    writer.array(leaf.image_idx, '<u4')
    writer.array(leaf.ordinals, '<u4')
    writer.raw(np.ascontiguousarray(leaf.codes, dtype=np.uint8).tobytes())


def _read_leaf(reader: BinaryReader, dim: int, code_bytes: int, fallback: LocalPq) -> CellLeaf:
    is_fallback = reader.u8('leaf.fallback')
    if is_fallback > 1:
        raise FormatError('leaf.fallback', f"неизвестный флаг {is_fallback}")
    if is_fallback:
        local_pq = fallback
    else:
        rotation = reader.array(dim * dim, '<f4', 'leaf.rotation').astype(np.float64).reshape(dim, dim)
        local_pq = LocalPq.from_stored(rotation, _read_pq(reader, 'leaf.pq'))
        if local_pq.pq.dim != dim:
            raise FormatError('leaf.pq', f"размерность {local_pq.pq.dim} не равна {dim}")
    count = reader.u64('leaf.postings')
    image_idx = reader.array(count, '<u4', 'leaf.image_idx').astype(np.uint32)
    ordinals = reader.array(count, '<u4', 'leaf.ordinals').astype(np.uint32)
    codes = np.frombuffer(reader.raw(count * code_bytes, 'leaf.codes'), dtype=np.uint8).reshape(count, code_bytes)
    return CellLeaf(local_pq=local_pq, image_idx=image_idx, ordinals=ordinals, codes=codes.copy())


def _write_tree(writer: BinaryWriter, tree: CellTree):
    writer.u64(len(tree.nodes))
    for node in tree.nodes:
        if node.is_leaf:
            writer.u8(NODE_LEAF)
            _write_leaf(writer, node.leaf)
        else:
            writer.u8(NODE_INTERNAL)
            writer.u32(node.split_dim)
            writer.f32(node.split_value)
            writer.u64(node.left)
            writer.u64(node.right)


def _read_tree(reader: BinaryReader, dim: int, code_bytes: int, fallback: LocalPq) -> CellTree:
    count = reader.u64('cell.nodes')
    nodes: List[CellNode] = []
    for node_id in range(count):
        kind = reader.u8('node.kind')
        if kind == NODE_LEAF:
            nodes.append(CellNode(leaf=_read_leaf(reader, dim, code_bytes, fallback)))
        elif kind == NODE_INTERNAL:
            split_dim = reader.u32('node.split_dim')
            split_value = reader.f32('node.split_value')
            left, right = reader.u64('node.left'), reader.u64('node.right')
            if split_dim >= dim or not (node_id < left < count and node_id < right < count):
                raise FormatError('node', f"узел {node_id} ссылается за пределы дерева")
            nodes.append(CellNode(split_dim=split_dim, split_value=float(split_value), left=left, right=right))
        else:
            raise FormatError('node.kind', f"неизвестный тип узла {kind}")
    return CellTree(nodes)


def serialize_index(index: RetrievalIndex) -> bytes:
    if index.coarse is None or index.fallback is None:
        raise IndexStateError("Индекс не построен")
    writer = BinaryWriter()
    writer.magic(INDEX_MAGIC)
    writer.u32(INDEX_VERSION)
    for name in _CONFIG_FIELDS:
        writer.u64(getattr(index.config, name))

    writer.u8(1 if index.pca is not None else 0)
    if index.pca is not None:
        writer.u64(index.pca.in_dim)
        writer.u64(index.pca.out_dim)
        writer.array(index.pca.mean, '<f4')
        writer.array(index.pca.storage_components, '<f4')
        writer.array(index.pca.explained_variance, '<f4')

    writer.u64(index.coarse.k)
    writer.u64(index.coarse.dim)
    writer.array(index.coarse.centroids, '<f4')
    writer.f32(index.coarse.inertia)
    writer.u64(len(index.coarse.inertia_trace))
    writer.array(np.asarray(index.coarse.inertia_trace), '<f4')

    _write_pq(writer, index.fallback.pq)

    writer.u64(len(index.cells))
    for tree in index.cells:
        _write_tree(writer, tree)

    writer.u64(len(index.images))
    for entry in index.images:
        writer.text(entry.image_id)
        writer.u64(len(entry))
        writer.array(entry.locations, '<f4')
        writer.array(entry.scales, '<f4')
    return writer.getvalue()


def deserialize_index(data: bytes) -> RetrievalIndex:
    reader = BinaryReader(data)
    reader.magic(INDEX_MAGIC)
    reader.version(INDEX_VERSION)
    values = {name: reader.u64(f'config.{name}') for name in _CONFIG_FIELDS}
    try:
        config = IndexConfig(**values)
    except ValueError as e:
        raise FormatError('config', str(e)) from e
    dim = config.descriptor_dim

    pca: Optional[PcaModel] = None
    if reader.u8('pca.present'):
        in_dim, out_dim = reader.u64('pca.in_dim'), reader.u64('pca.out_dim')
        if out_dim != dim:
            raise FormatError('pca.out_dim', f"ожидается {dim}, найдено {out_dim}")
        mean = reader.array(in_dim, '<f4', 'pca.mean').astype(np.float64)
        components = reader.array(out_dim * in_dim, '<f4', 'pca.components').astype(np.float64)
        variance = reader.array(out_dim, '<f4', 'pca.variance').astype(np.float64)
        pca = PcaModel.from_stored(mean, components.reshape(out_dim, in_dim), variance)

    k, coarse_dim = reader.u64('coarse.k'), reader.u64('coarse.dim')
    if coarse_dim != dim or k < 1:
        raise FormatError('coarse', f"словарь {k}x{coarse_dim} не согласован с размерностью {dim}")
    centroids = reader.array(k * dim, '<f4', 'coarse.centroids').astype(np.float64).reshape(k, dim)
    inertia = reader.f32('coarse.inertia')
    trace = reader.array(reader.u64('coarse.trace'), '<f4', 'coarse.trace').astype(np.float64)
    coarse = KMeansModel(centroids=centroids, inertia=float(inertia), inertia_trace=tuple(trace.tolist()))

    fallback_pq = _read_pq(reader, 'fallback')
    if fallback_pq.dim != dim:
        raise FormatError('fallback', f"размерность {fallback_pq.dim} не равна {dim}")
    fallback = LocalPq(rotation=np.eye(dim), pq=fallback_pq, fallback=True)

    n_cells = reader.u64('cells')
    if n_cells != k:
        raise FormatError('cells', f"ожидается {k} ячеек, найдено {n_cells}")
    cells = [_read_tree(reader, dim, config.code_bytes, fallback) for _ in range(n_cells)]

    images = []
    for _ in range(reader.u64('images')):
        image_id = reader.text('image.id')
        count = reader.u64('image.features')
        locations = reader.array(2 * count, '<f4', 'image.locations').astype(np.float64).reshape(count, 2)
        scales = reader.array(count, '<f4', 'image.scales').astype(np.float64)
        images.append(ImageEntry(image_id, locations, scales))
    reader.finish()

    index = RetrievalIndex(config=config, coarse=coarse, cells=cells, images=images, pca=pca, fallback=fallback)
    for leaf in index.leaves():
        if leaf.image_idx.size and int(leaf.image_idx.max()) >= len(images):
            raise FormatError('leaf.image_idx', "ссылка на отсутствующее изображение")
        if np.any(leaf.ordinals >= np.array([len(images[i]) for i in leaf.image_idx], dtype=np.int64)):
            raise FormatError('leaf.ordinals', "номер признака вне таблицы изображения")
    return index


def save_index(index: RetrievalIndex, path: str):
    data = serialize_index(index)
    write_bytes(path, data)
    engine_logger.info(f"Индекс сохранён: {path} ({len(data)} байт)")


def load_index(path: str) -> RetrievalIndex:
    index = deserialize_index(read_bytes(path))
    engine_logger.info(f"Индекс загружен: {path} ({index.posting_count} постингов)")
    return index
