"""Design matrices: membership indicator I and node-mean design M.

Column g of I is the 0/1 membership indicator of node g over the training
rows; M is I with each column scaled by that node's mean, so the fitted values
of a weight vector w are simply M w. Both are kept column-compressed sparse;
small problems can ask for dense views.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .data import Dataset
from .errors import DataError
from .nodegen import NodeSet

DENSE_CELL_LIMIT = 1_000_000


@dataclass(frozen=True, eq=False)
class DesignPair:
    """Aligned sparse I (indicator) and M (mean-scaled indicator).

    ``means`` and ``sizes`` are the per-node statistics in column order;
    column 0 is always the root (all rows).
    """

    indicator: sparse.csc_matrix
    node_mean: sparse.csc_matrix
    means: np.ndarray
    sizes: np.ndarray

    @property
    def n(self) -> int:
        return self.indicator.shape[0]

    @property
    def q(self) -> int:
        return self.indicator.shape[1]

    def _dense(self, mat: sparse.csc_matrix) -> np.ndarray:
        if self.n * self.q > DENSE_CELL_LIMIT:
            raise DataError(
                f"dense view refused: {self.n} x {self.q} exceeds "
                f"{DENSE_CELL_LIMIT} cells"
            )
        return np.asarray(mat.todense())

    def indicator_dense(self) -> np.ndarray:
        return self._dense(self.indicator)

    def node_mean_dense(self) -> np.ndarray:
        return self._dense(self.node_mean)


def build_design(nodes: NodeSet, ds: Dataset) -> DesignPair:
    """Assemble I and M from a node set's member lists.

    Every node must carry its member list; indices must lie in [0, n).
    """
    n = ds.n
    sizes = np.array([nd.size for nd in nodes.nodes], dtype=np.int64)
    means = np.array([nd.mean for nd in nodes.nodes])
    indptr = np.zeros(nodes.q + 1, dtype=np.int64)
    np.cumsum(sizes, out=indptr[1:])
    indices = np.empty(indptr[-1], dtype=np.int32)
    for g, nd in enumerate(nodes.nodes):
        if nd.members is None:
            raise DataError(f"node {g} has no member list; recompute memberships first")
        if nd.size and (nd.members[0] < 0 or nd.members[-1] >= n):
            raise DataError(f"node {g} has member indices outside [0, {n})")
        indices[indptr[g]:indptr[g + 1]] = nd.members
    data = np.ones(indptr[-1])
    indicator = sparse.csc_matrix((data, indices, indptr), shape=(n, nodes.q))
    node_mean = indicator @ sparse.diags(means)
    return DesignPair(indicator, node_mean.tocsc(), means, sizes)
