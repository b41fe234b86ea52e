"""Regression-tree learners shared by the three ensembles.

Three fitting procedures over one tree representation:

* fit_cart: greedy exact variance-reduction splits over all features.
* fit_extra_tree: one uniformly random threshold per sampled feature.
* fit_hist_tree_leafwise: best-first growth over histogram bins with a
  regularized gradient gain.

Trees are kept in two forms. The nested Internal/Leaf structure is the
public, serializable one; a flat array form backs batch prediction and is
built lazily in either direction. Routing is ``value <= threshold`` goes
left, at every boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import _kernels
from .errors import EmptyInput, LengthMismatch
from .ingest import FeatureVector


@dataclass(frozen=True)
class SplitCandidate:
    feature_index: int
    threshold: float
    gain: float


@dataclass(frozen=True)
class Leaf:
    value: float


@dataclass(frozen=True)
class Internal:
    feature_index: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"
    gain: float = 0.0


TreeNode = Union[Internal, Leaf]


@dataclass(frozen=True)
class TreeParams:
    max_depth: int
    min_samples_leaf: int = 1
    min_gain: float = 0.0

    def __post_init__(self) -> None:
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.min_gain < 0:
            raise ValueError("min_gain must be >= 0")


@dataclass(frozen=True)
class ExtraTreeParams:
    k_features: int
    min_samples_split: int = 2
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.k_features < 1:
            raise ValueError("k_features must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")


@dataclass(frozen=True)
class HistTreeParams:
    max_leaves: int
    min_child_samples: int = 1
    reg_lambda: float = 0.0

    def __post_init__(self) -> None:
        if self.max_leaves < 2:
            raise ValueError("max_leaves must be >= 2")
        if self.min_child_samples < 1:
            raise ValueError("min_child_samples must be >= 1")
        if self.reg_lambda < 0:
            raise ValueError("reg_lambda must be >= 0")


@dataclass(frozen=True)
class HistogramBins:
    """Per-feature strictly increasing bin upper-edges, in raw feature units."""

    edges: tuple[tuple[float, ...], ...]
    max_bins: int


@dataclass
class BinnedMatrix:
    codes: np.ndarray  # (n, d) int64 bin index per value
    bins: HistogramBins


class FlatTree:
    """Array-backed tree: parallel arrays indexed by node id, feature -1 = leaf."""

    __slots__ = ("feature", "threshold", "left", "right", "value", "gain")

    def __init__(self, feature, threshold, left, right, value, gain) -> None:
        self.feature = np.ascontiguousarray(feature, dtype=np.int64)
        self.threshold = np.ascontiguousarray(threshold, dtype=np.float64)
        self.left = np.ascontiguousarray(left, dtype=np.int64)
        self.right = np.ascontiguousarray(right, dtype=np.int64)
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        self.gain = np.ascontiguousarray(gain, dtype=np.float64)

    def n_leaves(self) -> int:
        return int(np.sum(self.feature == _kernels.LEAF))

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _kernels.predict_flat(
            self.feature, self.threshold, self.left, self.right, self.value, X
        )


class RegressionTree:
    """A fitted tree: nested ``root`` plus derived leaf/depth counts.

    The nested structure is materialized lazily from the flat arrays (and
    vice versa), so hot loops never pay for per-node Python objects.
    """

    def __init__(
        self,
        root: Optional[TreeNode] = None,
        n_leaves: int = 0,
        max_depth_reached: int = 0,
        flat: Optional[FlatTree] = None,
    ) -> None:
        if root is None and flat is None:
            raise ValueError("need a nested root or a flat form")
        self._root = root
        self._flat = flat
        self.n_leaves = n_leaves
        self.max_depth_reached = max_depth_reached

    @property
    def root(self) -> TreeNode:
        if self._root is None:
            self._root = flat_to_nested(self._flat)
        return self._root

    @property
    def flat(self) -> FlatTree:
        if self._flat is None:
            self._flat = nested_to_flat(self._root)
        return self._flat

    @classmethod
    def from_flat(cls, flat: FlatTree, max_depth_reached: int) -> "RegressionTree":
        return cls(
            flat=flat, n_leaves=flat.n_leaves(), max_depth_reached=max_depth_reached
        )

    @classmethod
    def from_root(cls, root: TreeNode) -> "RegressionTree":
        n_leaves, depth = _count_nested(root)
        return cls(root=root, n_leaves=n_leaves, max_depth_reached=depth)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RegressionTree):
            return NotImplemented
        return self.root == other.root

    def __repr__(self) -> str:
        return (
            f"RegressionTree(n_leaves={self.n_leaves},"
            f" max_depth_reached={self.max_depth_reached})"
        )


def _count_nested(root: TreeNode) -> tuple[int, int]:
    n_leaves = 0
    max_depth = 0
    stack: list[tuple[TreeNode, int]] = [(root, 0)]
    while stack:
        node, depth = stack.pop()
        if isinstance(node, Leaf):
            n_leaves += 1
            max_depth = max(max_depth, depth)
        else:
            stack.append((node.left, depth + 1))
            stack.append((node.right, depth + 1))
    return n_leaves, max_depth


def flat_to_nested(flat: FlatTree) -> TreeNode:
    """Build the nested node structure without recursion (children first)."""
    n = flat.feature.shape[0]
    built: list[Optional[TreeNode]] = [None] * n
    stack = [(0, False)]
    while stack:
        node, expanded = stack.pop()
        if flat.feature[node] == _kernels.LEAF:
            built[node] = Leaf(float(flat.value[node]))
        elif expanded:
            built[node] = Internal(
                feature_index=int(flat.feature[node]),
                threshold=float(flat.threshold[node]),
                left=built[int(flat.left[node])],
                right=built[int(flat.right[node])],
                gain=float(flat.gain[node]),
            )
        else:
            stack.append((node, True))
            stack.append((int(flat.left[node]), False))
            stack.append((int(flat.right[node]), False))
    assert built[0] is not None
    return built[0]


def nested_to_flat(root: TreeNode) -> FlatTree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []
    gain: list[float] = []

    def alloc(node: TreeNode) -> int:
        idx = len(feature)
        if isinstance(node, Leaf):
            feature.append(_kernels.LEAF)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(node.value)
            gain.append(0.0)
        else:
            feature.append(node.feature_index)
            threshold.append(node.threshold)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            gain.append(node.gain)
        return idx

    # Explicit work list; preorder node ids, children patched in after allocation.
    alloc(root)
    work: list[tuple[TreeNode, int]] = [(root, 0)]
    while work:
        node, idx = work.pop()
        if isinstance(node, Leaf):
            continue
        lid = alloc(node.left)
        rid = alloc(node.right)
        left[idx] = lid
        right[idx] = rid
        work.append((node.left, lid))
        work.append((node.right, rid))

    return FlatTree(
        np.array(feature, np.int64),
        np.array(threshold, np.float64),
        np.array(left, np.int64),
        np.array(right, np.int64),
        np.array(value, np.float64),
        np.array(gain, np.float64),
    )


def _as_matrix(X) -> np.ndarray:
    arr = np.ascontiguousarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return arr


def best_exact_split(feature_values, targets) -> Optional[SplitCandidate]:
    """Best single-feature split by SSE reduction, or None.

    Thresholds are midpoints between adjacent distinct sorted values. A
    candidate is returned only when its gain is strictly positive; equal
    gains resolve to the smallest threshold.
    """
    vals = np.asarray(feature_values, dtype=np.float64)
    ys = np.asarray(targets, dtype=np.float64)
    if vals.shape[0] != ys.shape[0]:
        raise LengthMismatch(vals.shape[0], ys.shape[0])
    n = vals.shape[0]
    if n < 2:
        return None
    order = np.argsort(vals, kind="stable")
    vals_sorted = np.ascontiguousarray(vals[order])
    ys_sorted = np.ascontiguousarray(ys[order])
    s_total = 0.0
    for v in ys_sorted:
        s_total += float(v)
    gain, thr = _kernels.split_scan_sorted(vals_sorted, ys_sorted, s_total, float(n))
    if gain <= 0.0:
        return None
    return SplitCandidate(feature_index=0, threshold=float(thr), gain=float(gain))


def _sorted_index(X: np.ndarray) -> np.ndarray:
    n, d = X.shape
    idx = np.empty((d, n), dtype=np.int64)
    for f in range(d):
        idx[f] = np.argsort(X[:, f], kind="stable")
    return idx


def fit_cart(
    X,
    targets,
    params: TreeParams,
    sorted_idx: Optional[np.ndarray] = None,
) -> RegressionTree:
    """Greedy exact regression tree.

    At each node the split maximizing SSE reduction over all features wins;
    ties go to the lowest feature index, then the smallest threshold. A node
    stays a leaf when the depth cap is hit, it has fewer than
    ``2 * min_samples_leaf`` rows, it is pure, or no split beats
    ``min_gain``. Leaf values are node target means.

    ``sorted_idx`` may carry precomputed per-feature orderings (shape (d, n));
    boosting reuses one across rounds since feature order never changes.
    """
    X = _as_matrix(X)
    y = np.ascontiguousarray(targets, dtype=np.float64)
    if X.shape[0] == 0:
        raise EmptyInput("fit_cart needs at least one row")
    if X.shape[0] != y.shape[0]:
        raise LengthMismatch(X.shape[0], y.shape[0])
    if sorted_idx is None:
        sorted_idx = _sorted_index(X)
    out = _kernels.cart_fit(
        X, y, sorted_idx, params.max_depth, params.min_samples_leaf, params.min_gain
    )
    flat = FlatTree(*out[:6])
    return RegressionTree.from_flat(flat, max_depth_reached=int(out[6]))


def fit_cart_with_train_values(
    X: np.ndarray,
    y: np.ndarray,
    params: TreeParams,
    sorted_idx: np.ndarray,
) -> tuple[RegressionTree, np.ndarray]:
    """fit_cart plus the fitted leaf value of every training row (for boosting)."""
    out = _kernels.cart_fit(
        X, y, sorted_idx, params.max_depth, params.min_samples_leaf, params.min_gain
    )
    flat = FlatTree(*out[:6])
    return RegressionTree.from_flat(flat, max_depth_reached=int(out[6])), out[7]


def fit_extra_tree(X, targets, params: ExtraTreeParams) -> RegressionTree:
    """Extremely randomized tree, deterministic for a fixed seed.

    Per node: sample min(k_features, n_features) distinct features, draw one
    threshold uniformly from that feature's (min, max) in the node, keep the
    candidate with the largest gain. Splits require the node to have at
    least min_samples_split rows and the gain to be positive. There is no
    depth cap; growth stops at purity or the size floor.
    """
    X = _as_matrix(X)
    y = np.ascontiguousarray(targets, dtype=np.float64)
    if X.shape[0] == 0:
        raise EmptyInput("fit_extra_tree needs at least one row")
    if X.shape[0] != y.shape[0]:
        raise LengthMismatch(X.shape[0], y.shape[0])
    seed = int(params.rng_seed) % (2**32)
    out = _kernels.ert_fit(X, y, params.k_features, params.min_samples_split, seed)
    flat = FlatTree(*out[:6])
    return RegressionTree.from_flat(flat, max_depth_reached=int(out[6]))


def build_histograms(X, max_bins: int) -> HistogramBins:
    """Quantile bin edges per feature.

    Edges sit at the empirical quantiles q = i/max_bins for i = 1..max_bins-1,
    where the quantile of sorted values v at q is v[ceil(q*n) - 1]; duplicate
    edges collapse. A constant feature gets zero edges (a single bin).
    """
    if max_bins < 2:
        raise ValueError("max_bins must be >= 2")
    X = _as_matrix(X)
    n, d = X.shape
    if n == 0:
        raise EmptyInput("build_histograms needs at least one row")
    per_feature: list[tuple[float, ...]] = []
    for f in range(d):
        v = np.sort(X[:, f])
        if v[0] == v[-1]:
            per_feature.append(())
            continue
        edges: list[float] = []
        for i in range(1, max_bins):
            # ceil((i/max_bins) * n) - 1, computed in exact integer arithmetic
            idx = -((-i * n) // max_bins) - 1
            edge = float(v[idx])
            if not edges or edge > edges[-1]:
                edges.append(edge)
        per_feature.append(tuple(edges))
    return HistogramBins(edges=tuple(per_feature), max_bins=max_bins)


def bin_matrix(X, bins: HistogramBins) -> BinnedMatrix:
    """Map raw values to bin codes: code = number of edges strictly below the value.

    A value lands in bin b exactly when it is <= edges[b] (and above
    edges[b-1]), so splitting at bin b is splitting at the raw threshold
    edges[b].
    """
    X = _as_matrix(X)
    n, d = X.shape
    if d != len(bins.edges):
        raise LengthMismatch(d, len(bins.edges))
    codes = np.zeros((n, d), dtype=np.int64)
    for f in range(d):
        if bins.edges[f]:
            codes[:, f] = np.searchsorted(
                np.asarray(bins.edges[f]), X[:, f], side="left"
            )
    return BinnedMatrix(codes=codes, bins=bins)


def fit_hist_tree_leafwise(
    binned: BinnedMatrix, gradients, params: HistTreeParams
) -> RegressionTree:
    """Leaf-wise histogram tree on squared-loss gradients (g = prediction - target).

    Grows best-first under gain
    G_l^2/(n_l+lambda) + G_r^2/(n_r+lambda) - G^2/(n+lambda)
    until the leaf budget is reached or no leaf has a positive-gain split
    with both children holding at least min_child_samples rows. Leaf output
    is -G/(n+lambda). Stored thresholds are bin upper-edges in raw units.
    """
    g = np.ascontiguousarray(gradients, dtype=np.float64)
    n = binned.codes.shape[0]
    if n == 0:
        raise EmptyInput("fit_hist_tree_leafwise needs at least one row")
    if n != g.shape[0]:
        raise LengthMismatch(n, g.shape[0])
    tree, _ = _fit_hist_with_train_values(binned, g, params)
    return tree


def _fit_hist_with_train_values(
    binned: BinnedMatrix, g: np.ndarray, params: HistTreeParams
) -> tuple[RegressionTree, np.ndarray]:
    n_bins = np.array([len(e) + 1 for e in binned.bins.edges], dtype=np.int64)
    out = _kernels.hist_fit_leafwise(
        binned.codes,
        n_bins,
        g,
        params.max_leaves,
        params.min_child_samples,
        params.reg_lambda,
    )
    feature, thr_bin, left, right, value, gain, depth, row_value = out
    threshold = np.zeros_like(value)
    for i in range(feature.shape[0]):
        if feature[i] != _kernels.LEAF:
            threshold[i] = binned.bins.edges[int(feature[i])][int(thr_bin[i])]
    flat = FlatTree(feature, threshold, left, right, value, gain)
    return RegressionTree.from_flat(flat, max_depth_reached=int(depth)), row_value


def predict_tree(tree: RegressionTree, x) -> float:
    """Route one input through the nested structure; value <= threshold goes left."""
    if isinstance(x, FeatureVector):
        x = x.as_array()
    x = np.asarray(x, dtype=np.float64)
    node = tree.root
    while isinstance(node, Internal):
        node = node.left if x[node.feature_index] <= node.threshold else node.right
    return node.value
