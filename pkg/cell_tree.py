"""
KD-дерево ячейки грубого словаря: внутренние узлы делят остатки по медиане
измерения с наибольшей дисперсией, листья хранят LOPQ и постинги
"""

import heapq
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional, Tuple

import numpy as np

from quantizer import LocalPq, unpack_codes


@dataclass(eq=False)
class CellLeaf:
    local_pq: LocalPq
    image_idx: np.ndarray     # uint32, индексы в таблице изображений
    ordinals: np.ndarray      # uint32, номер признака в изображении
    codes: np.ndarray         # uint8 (n, code_bytes)
    _indices: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self) -> int:
        return int(self.image_idx.shape[0])

    @property
    def indices(self) -> np.ndarray:
        """Распакованные коды, кешируются для ADC"""
        if self._indices is None:
            self._indices = unpack_codes(self.codes, self.local_pq.pq.m, self.local_pq.pq.bits)
        return self._indices


@dataclass(eq=False)
class CellNode:
    split_dim: int = -1
    split_value: float = 0.0
    left: int = -1
    right: int = -1
    leaf: Optional[CellLeaf] = None

    @property
    def is_leaf(self) -> bool:
        return self.leaf is not None


class CellTree:
    """Дерево одной ячейки; узлы хранятся списком в прямом (pre-order) порядке"""

    def __init__(self, nodes: List[CellNode]):
        self.nodes = nodes

    @classmethod
    def build(cls, residuals: np.ndarray, leaf_max: int,
              make_leaf: Callable[[np.ndarray, int], CellLeaf],
              snap: Callable[[float], float] = float) -> 'CellTree':
        """
        Строит дерево над остатками ячейки.
        make_leaf(row_ids, leaf_number) создаёт лист для подмножества строк.
        """
        nodes: List[CellNode] = []
        leaf_counter = [0]

        def grow(rows: np.ndarray) -> int:
            node_id = len(nodes)
            node = CellNode()
            nodes.append(node)
            if rows.shape[0] <= leaf_max:
                node.leaf = make_leaf(rows, leaf_counter[0])
                leaf_counter[0] += 1
                return node_id

            subset = residuals[rows]
            variances = subset.var(axis=0)
            split_dim = int(np.argmax(variances))
            order = np.argsort(subset[:, split_dim], kind='stable')
            half = rows.shape[0] // 2
            lower = subset[order[half - 1], split_dim]
            upper = subset[order[half], split_dim]
            node.split_dim = split_dim
            node.split_value = snap(0.5 * (lower + upper))
            node.left = grow(rows[order[:half]])
            node.right = grow(rows[order[half:]])
            return node_id

        grow(np.arange(residuals.shape[0]))
        return cls(nodes)

    def leaves(self) -> Iterator[CellLeaf]:
        for node in self.nodes:
            if node.is_leaf:
                yield node.leaf

    @property
    def leaf_count(self) -> int:
        return sum(1 for node in self.nodes if node.is_leaf)

    @property
    def posting_count(self) -> int:
        return sum(len(leaf) for leaf in self.leaves())

    def best_first(self, query_residual: np.ndarray) -> Iterator[Tuple[float, CellLeaf]]:
        """
        Листья в порядке возрастания нижней оценки расстояния до остатка запроса.
        Оценка накапливает квадраты выходов за разделяющие плоскости.
        """
        if not self.nodes:
            return
        counter = 0
        offsets = np.zeros(query_residual.shape[0])
        heap = [(0.0, counter, 0, offsets)]
        while heap:
            bound, _, node_id, offsets = heapq.heappop(heap)
            node = self.nodes[node_id]
            if node.is_leaf:
                yield bound, node.leaf
                continue
            diff = query_residual[node.split_dim] - node.split_value
            near, far = (node.left, node.right) if diff < 0 else (node.right, node.left)
            far_offsets = offsets.copy()
            far_offsets[node.split_dim] = diff
            far_bound = bound - offsets[node.split_dim] ** 2 + diff ** 2
            counter += 1
            heapq.heappush(heap, (bound, counter, near, offsets))
            counter += 1
            heapq.heappush(heap, (max(far_bound, bound), counter, far, far_offsets))
