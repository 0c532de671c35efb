"""Regression engines: a from-scratch extremely randomized forest and a
brute-force kNN cross-check.

The forest follows the canonical extremely-randomized-trees recipe: every
tree is grown on the full training set (no bootstrap); at each node a set of
candidate features is sampled without replacement, one uniform-random
threshold per candidate is drawn strictly inside that feature's observed
range at the node, and the candidate with the largest total variance
reduction (summed over output dimensions) wins. Growth stops at
min_samples_split / min_samples_leaf / constant-target nodes. Each tree's
RNG is derived deterministically from (seed, tree index), so identical
(data, params, seed) produce bit-identical predictions.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .rng import derive_seed

FOREST_FORMAT = "daeloc-forest"
FOREST_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ForestParams:
    """Forest hyperparameters. ``max_features=None`` means all features."""

    n_trees: int = 100
    max_features: int | None = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_features is not None and self.max_features < 1:
            raise ValueError("max_features must be >= 1 or None")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")


@dataclass
class Tree:
    """One decision tree in flat-array form.

    ``feature[i] == -1`` marks node ``i`` as a leaf; its target mean lives in
    ``value[i]``. Internal nodes route a sample left when
    ``x[feature] <= threshold``.
    """

    feature: np.ndarray    # (n_nodes,) int32, -1 for leaves
    threshold: np.ndarray  # (n_nodes,) float64, NaN for leaves
    left: np.ndarray       # (n_nodes,) int32 child ids, -1 for leaves
    right: np.ndarray
    value: np.ndarray      # (n_nodes, output_dim) float64

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Route every row to its leaf and return the leaf means, (n, q)."""
        return self.value[self.leaf_rows(X)]

    def leaf_rows(self, X: np.ndarray) -> np.ndarray:
        """Leaf node id reached by each row (also used by invariant checks)."""
        pos = np.zeros(X.shape[0], dtype=np.int32)
        active = np.flatnonzero(self.feature[pos] >= 0)
        while active.size:
            node = pos[active]
            go_left = X[active, self.feature[node]] <= self.threshold[node]
            pos[active] = np.where(go_left, self.left[node], self.right[node])
            active = active[self.feature[pos[active]] >= 0]
        return pos


@dataclass
class ForestModel:
    """Trained forest: tree list plus the exact fit configuration."""

    trees: list[Tree]
    params: ForestParams
    seed: int
    n_features: int
    output_dim: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Per-row average of the reached leaf means over all trees, (n, q)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(
                f"expected (n, {self.n_features}) feature matrix, got {X.shape}"
            )
        acc = np.zeros((X.shape[0], self.output_dim))
        for tree in self.trees:
            acc += tree.predict(X)
        return acc / len(self.trees)


def _as_xy(X, Y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.ndim != 2 or Y.ndim != 2:
        raise ValueError("X must be (n, d) and Y (n,) or (n, q)")
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    if X.shape[0] < 1:
        raise ValueError("training set must not be empty")
    if not (np.isfinite(X).all() and np.isfinite(Y).all()):
        raise ValueError("training data must be finite")
    return X, Y


def _grow_tree(X: np.ndarray, Y: np.ndarray, params: ForestParams,
               rng: np.random.Generator) -> Tree:
    n, d = X.shape
    q = Y.shape[1]
    mf = d if params.max_features is None else min(params.max_features, d)
    min_leaf = params.min_samples_leaf
    min_split = max(params.min_samples_split, 2 * min_leaf)

    zero_row = np.zeros(q)
    feature: list[int] = [-1]
    threshold: list[float] = [np.nan]
    left: list[int] = [-1]
    right: list[int] = [-1]
    value: list[np.ndarray] = [zero_row]

    def new_node() -> int:
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        value.append(zero_row)
        return len(feature) - 1

    stack: list[tuple[int, np.ndarray]] = [(0, np.arange(n))]
    with np.errstate(divide="ignore", invalid="ignore"):
        while stack:
            node, idx = stack.pop()
            Yn = Y[idx]
            n_node = len(idx)
            split = None
            if n_node >= min_split and not (Yn == Yn[0]).all():
                Xn = X[idx]
                mins = Xn.min(axis=0)
                maxs = Xn.max(axis=0)
                lo = np.nextafter(mins, maxs)
                # A feature is splittable only if a float strictly inside its
                # observed range exists; constant features drop out here.
                splittable = lo < maxs
                if splittable.any():
                    cand = np.flatnonzero(splittable)
                    if len(cand) > mf:
                        cand = rng.choice(cand, size=mf, replace=False)
                    thr = rng.uniform(mins[cand], maxs[cand])
                    hi = np.nextafter(maxs[cand], mins[cand])
                    thr = np.minimum(np.maximum(thr, lo[cand]), hi)

                    if n_node == 2 and min_leaf == 1:
                        # Both children are singletons for every candidate,
                        # so all scores tie at exactly zero; argmin would
                        # pick the first candidate.
                        split = (int(cand[0]), float(thr[0]), Xn[:, cand[0]] <= thr[0])
                    else:
                        mask = (Xn[:, cand] <= thr).astype(np.float64)
                        left_n = mask.sum(axis=0)
                        right_n = n_node - left_n
                        ok = (left_n >= min_leaf) & (right_n >= min_leaf)
                        if ok.any():
                            Yn2 = Yn * Yn
                            ls = mask.T @ Yn
                            lq = mask.T @ Yn2
                            rs = Yn.sum(axis=0) - ls
                            rq = Yn2.sum(axis=0) - lq
                            child_sse = (
                                (lq - ls * ls / left_n[:, None]).sum(axis=1)
                                + (rq - rs * rs / right_n[:, None]).sum(axis=1)
                            )
                            child_sse[~ok] = np.inf
                            best = int(np.argmin(child_sse))
                            split = (int(cand[best]), float(thr[best]), mask[:, best] > 0.0)

            if split is None:
                value[node] = Yn[0] if n_node == 1 else Yn.mean(axis=0)
                continue
            feature[node], threshold[node], go_left = split
            left_id = new_node()
            right_id = new_node()
            left[node] = left_id
            right[node] = right_id
            stack.append((right_id, idx[~go_left]))
            stack.append((left_id, idx[go_left]))

    return Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.vstack(value),
    )


def fit_extratrees(X, Y, params: ForestParams = ForestParams(), seed: int = 0,
                   n_jobs: int = 1) -> ForestModel:
    """Fit an extremely randomized forest on the full training set.

    Multi-output: ``Y`` may be (n,) or (n, q); split quality is the variance
    reduction summed over output dimensions. ``n_jobs`` only distributes the
    per-tree work; results are identical to the sequential run because every
    tree owns a seed derived from (seed, tree index).
    """
    X, Y = _as_xy(X, Y)
    tree_seeds = [derive_seed(seed, "tree", i) for i in range(params.n_trees)]
    if n_jobs != 1 and params.n_trees > 1:
        from joblib import Parallel, delayed

        trees = Parallel(n_jobs=n_jobs)(
            delayed(_grow_tree)(X, Y, params, np.random.default_rng(s)) for s in tree_seeds
        )
    else:
        trees = [_grow_tree(X, Y, params, np.random.default_rng(s)) for s in tree_seeds]
    return ForestModel(trees=list(trees), params=params, seed=seed,
                       n_features=X.shape[1], output_dim=Y.shape[1])


def predict(model: ForestModel, X) -> np.ndarray:
    """Module-level alias for :meth:`ForestModel.predict`."""
    return model.predict(X)


def save_forest(model: ForestModel, path: str | Path) -> Path:
    """Persist a forest to a versioned ``.npz`` archive.

    Schema: a ``meta`` JSON string (format, version, params, seed,
    n_features, output_dim, n_trees) plus the trees' arrays concatenated
    node-major (``feature``, ``threshold``, ``left``, ``right``, ``value``)
    and an ``offsets`` array with tree boundaries. Binary floats round-trip
    exactly: predict(load(save(m))) == predict(m).
    """
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(path.suffix + ".npz")
    offsets = np.zeros(len(model.trees) + 1, dtype=np.int64)
    for i, tree in enumerate(model.trees):
        offsets[i + 1] = offsets[i] + tree.n_nodes
    meta = {
        "format": FOREST_FORMAT,
        "version": FOREST_FORMAT_VERSION,
        "params": asdict(model.params),
        "seed": model.seed,
        "n_features": model.n_features,
        "output_dim": model.output_dim,
        "n_trees": len(model.trees),
    }
    np.savez_compressed(
        path,
        meta=np.asarray(json.dumps(meta, sort_keys=True)),
        offsets=offsets,
        feature=np.concatenate([t.feature for t in model.trees]),
        threshold=np.concatenate([t.threshold for t in model.trees]),
        left=np.concatenate([t.left for t in model.trees]),
        right=np.concatenate([t.right for t in model.trees]),
        value=np.concatenate([t.value for t in model.trees], axis=0),
    )
    return path


def load_forest(path: str | Path) -> ForestModel:
    """Inverse of :func:`save_forest`."""
    with np.load(Path(path), allow_pickle=False) as archive:
        meta = json.loads(str(archive["meta"]))
        if meta.get("format") != FOREST_FORMAT:
            raise ValueError(f"{path}: not a {FOREST_FORMAT} archive")
        if meta.get("version") != FOREST_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {meta.get('version')}")
        offsets = archive["offsets"]
        trees = []
        for i in range(meta["n_trees"]):
            sl = slice(offsets[i], offsets[i + 1])
            trees.append(Tree(
                feature=archive["feature"][sl],
                threshold=archive["threshold"][sl],
                left=archive["left"][sl],
                right=archive["right"][sl],
                value=archive["value"][sl],
            ))
    return ForestModel(trees=trees, params=ForestParams(**meta["params"]),
                       seed=meta["seed"], n_features=meta["n_features"],
                       output_dim=meta["output_dim"])


@dataclass
class KnnModel:
    """Memorized training set for unweighted k-nearest-neighbor regression."""

    X: np.ndarray
    Y: np.ndarray
    k: int


def fit_knn(X, Y, k: int) -> KnnModel:
    X, Y = _as_xy(X, Y)
    if not 1 <= k <= X.shape[0]:
        raise ValueError(f"k must be in [1, {X.shape[0]}], got {k}")
    return KnnModel(X=X, Y=Y, k=k)


def predict_knn(model: KnnModel, X, chunk: int = 256) -> np.ndarray:
    """Unweighted mean of the k nearest training targets (Euclidean distance).

    Distance ties are broken toward the lower training-row index.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.X.shape[1]:
        raise ValueError(f"expected (n, {model.X.shape[1]}) query matrix, got {X.shape}")
    out = np.empty((X.shape[0], model.Y.shape[1]))
    for start in range(0, X.shape[0], chunk):
        q = X[start:start + chunk]
        d2 = ((q[:, None, :] - model.X[None, :, :]) ** 2).sum(axis=2)
        # Stable sort keeps the lower training index first on exact ties.
        nearest = np.argsort(d2, axis=1, kind="stable")[:, :model.k]
        out[start:start + chunk] = model.Y[nearest].mean(axis=1)
    return out
