"""Regularized gradient-boosted trees with a logistic objective, and bagging.

Trees are grown with exact greedy split search: every feature is scanned
over its sorted distinct values inside each node, and a split is kept
only when its gain clears ``min_split_gain`` and both children carry at
least ``min_child_weight`` hessian mass. Values equal to the missing code
(on columns flagged in ``missing_mask``) are routed to whichever side
gives the larger gain.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from numba import njit

MISSING_VALUE = -1.0
MARGIN_CLIP = 30.0

MODEL_MAGIC = "devmatch-gbt"
ENSEMBLE_MAGIC = "devmatch-bag"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class BoostParams:
    rounds: int = 200
    max_depth: int = 10
    subsample: float = 1.0
    min_child_weight: float = 4.0
    learning_rate: float = 0.1
    min_split_gain: float = 5.0
    l2_reg: float = 1.0
    base_score: float = 0.5

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must be in (0, 1]")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_child_weight < 0 or self.min_split_gain < 0 or self.l2_reg < 0:
            raise ValueError("min_child_weight, min_split_gain and l2_reg must be >= 0")
        if not 0 < self.base_score < 1:
            raise ValueError("base_score must be a probability in (0, 1)")

    def with_overrides(self, **overrides) -> "BoostParams":
        return replace(self, **overrides)


def sigmoid(margin):
    return 1.0 / (1.0 + np.exp(-np.clip(margin, -MARGIN_CLIP, MARGIN_CLIP)))


def log_loss(prob, label) -> float:
    prob = np.asarray(prob, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    return float(-np.mean(label * np.log(prob) + (1.0 - label) * np.log1p(-prob)))


def logistic_grad_hess(predicted_prob, label):
    """First and second derivative of the log-loss with respect to the margin."""
    p = np.asarray(predicted_prob, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    grad = p - y
    hess = p * (1.0 - p)
    if grad.ndim == 0:
        return float(grad), float(hess)
    return grad, hess


# --------------------------------------------------------------------------
# numba kernels


@njit(cache=True)
def _grow(X, g, h, order, missing_mask, missing_value, max_depth, min_child_weight, min_split_gain, lam):
    n_features = X.shape[1]
    m = order.shape[1]
    cap = 2 * m - 1
    if max_depth < 30:
        cap = min(cap, 2 ** (max_depth + 1) - 1)
    feat = np.full(cap, -1, np.int64)
    thr = np.zeros(cap, np.float64)
    miss_left = np.zeros(cap, np.bool_)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    weight = np.zeros(cap, np.float64)
    gain = np.zeros(cap, np.float64)
    hess = np.zeros(cap, np.float64)

    goes_left = np.zeros(X.shape[0], np.bool_)
    buf = np.empty(m, order.dtype)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    st_node = np.empty(cap, np.int64)
    top = 0
    st_start[0] = 0
    st_end[0] = m
    st_depth[0] = 0
    st_node[0] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        s = st_start[top]
        e = st_end[top]
        depth = st_depth[top]
        node = st_node[top]

        G = 0.0
        H = 0.0
        for i in range(s, e):
            r = order[0, i]
            G += g[r]
            H += h[r]
        weight[node] = -G / (H + lam)
        hess[node] = H
        if depth >= max_depth or e - s < 2:
            continue

        parent = G * G / (H + lam)
        best_gain = -np.inf
        best_f = -1
        best_thr = 0.0
        best_ml = False
        for f in range(n_features):
            Gm = 0.0
            Hm = 0.0
            nm = 0
            check_missing = missing_mask[f]
            if check_missing:
                for i in range(s, e):
                    r = order[f, i]
                    if X[r, f] == missing_value:
                        Gm += g[r]
                        Hm += h[r]
                        nm += 1
            if nm == e - s:
                continue
            if nm > 0:
                # missing on the left, every present value on the right
                vmin = 0.0
                for i in range(s, e):
                    r = order[f, i]
                    if X[r, f] != missing_value:
                        vmin = X[r, f]
                        break
                GR = G - Gm
                HR = H - Hm
                if Hm >= min_child_weight and HR >= min_child_weight:
                    cand = 0.5 * (Gm * Gm / (Hm + lam) + GR * GR / (HR + lam) - parent)
                    if cand > best_gain:
                        best_gain = cand
                        best_f = f
                        best_thr = vmin
                        best_ml = True
            GL = 0.0
            HL = 0.0
            prev = 0.0
            started = False
            for i in range(s, e):
                r = order[f, i]
                v = X[r, f]
                if check_missing and v == missing_value:
                    continue
                if started and v != prev:
                    t = (prev + v) * 0.5
                    if t <= prev:
                        t = v
                    GR = G - GL
                    HR = H - HL
                    if HL >= min_child_weight and HR >= min_child_weight:
                        cand = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent)
                        if cand > best_gain:
                            best_gain = cand
                            best_f = f
                            best_thr = t
                            best_ml = False
                    if nm > 0:
                        GLm = GL + Gm
                        HLm = HL + Hm
                        GRm = G - GLm
                        HRm = H - HLm
                        if HLm >= min_child_weight and HRm >= min_child_weight:
                            cand = 0.5 * (GLm * GLm / (HLm + lam) + GRm * GRm / (HRm + lam) - parent)
                            if cand > best_gain:
                                best_gain = cand
                                best_f = f
                                best_thr = t
                                best_ml = True
                GL += g[r]
                HL += h[r]
                prev = v
                started = True

        if best_f < 0 or best_gain <= 0.0 or best_gain < min_split_gain:
            continue

        nl = 0
        fmiss = missing_mask[best_f]
        for i in range(s, e):
            r = order[0, i]
            v = X[r, best_f]
            if fmiss and v == missing_value:
                gl = best_ml
            else:
                gl = v < best_thr
            goes_left[r] = gl
            if gl:
                nl += 1
        for f in range(n_features):
            a = 0
            b = nl
            for i in range(s, e):
                r = order[f, i]
                if goes_left[r]:
                    buf[a] = r
                    a += 1
                else:
                    buf[b] = r
                    b += 1
            for i in range(e - s):
                order[f, s + i] = buf[i]

        feat[node] = best_f
        thr[node] = best_thr
        miss_left[node] = best_ml
        gain[node] = best_gain
        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        left[node] = lid
        right[node] = rid
        # right pushed first so the left subtree is expanded first
        st_start[top] = s + nl
        st_end[top] = e
        st_depth[top] = depth + 1
        st_node[top] = rid
        top += 1
        st_start[top] = s
        st_end[top] = s + nl
        st_depth[top] = depth + 1
        st_node[top] = lid
        top += 1

    return (feat[:n_nodes], thr[:n_nodes], miss_left[:n_nodes], left[:n_nodes],
            right[:n_nodes], weight[:n_nodes], gain[:n_nodes], hess[:n_nodes])


@njit(cache=True)
def _add_tree(X, feat, thr, miss_left, left, right, weight, missing_mask, missing_value, scale, out):
    for i in range(X.shape[0]):
        node = 0
        while feat[node] >= 0:
            f = feat[node]
            v = X[i, f]
            if missing_mask[f] and v == missing_value:
                node = left[node] if miss_left[node] else right[node]
            elif v < thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] += scale * weight[node]


# --------------------------------------------------------------------------


@dataclass
class Tree:
    """Array-backed binary tree; node 0 is the root and feature == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    missing_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    weight: np.ndarray
    gain: np.ndarray = None
    hess: np.ndarray = None

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int = 0) -> bool:
        return self.feature[node] < 0

    def depth(self) -> int:
        def walk(node):
            if self.feature[node] < 0:
                return 0
            return 1 + max(walk(self.left[node]), walk(self.right[node]))
        return walk(0)

    def preorder(self) -> list[int]:
        out, stack = [], [0]
        while stack:
            node = stack.pop()
            out.append(node)
            if self.feature[node] >= 0:
                stack.append(int(self.right[node]))
                stack.append(int(self.left[node]))
        return out

    def leaves(self) -> list[int]:
        return [i for i in range(self.n_nodes) if self.feature[i] < 0]

    def splits(self) -> list[int]:
        return [i for i in range(self.n_nodes) if self.feature[i] >= 0]


def fit_tree(X, grad, hess, params: BoostParams, missing_mask=None, rows=None) -> Tree:
    """Grow one tree on (a subset ``rows`` of) X against given gradients/hessians."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    hess = np.ascontiguousarray(hess, dtype=np.float64)
    if not (len(X) == len(grad) == len(hess)) or len(X) == 0:
        raise ValueError("X, gradients and hessians must be non-empty and of equal length")
    mask = _mask(missing_mask, X.shape[1])
    order = _presort(X)
    if rows is not None:
        order = _subset_order(order, np.asarray(rows), len(X))
    return _fit_sorted(X, grad, hess, order, mask, params)


def _fit_sorted(X, grad, hess, order, mask, params: BoostParams) -> Tree:
    out = _grow(
        X, grad, hess, order, mask, MISSING_VALUE, params.max_depth,
        float(params.min_child_weight), float(params.min_split_gain), float(params.l2_reg),
    )
    return Tree(*(a.copy() for a in out))


def _presort(X: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int32))


def _subset_order(order: np.ndarray, rows: np.ndarray, n: int) -> np.ndarray:
    keep = np.zeros(n, dtype=np.bool_)
    keep[rows] = True
    m = int(keep.sum())
    out = np.empty((order.shape[0], m), dtype=order.dtype)
    for f in range(order.shape[0]):
        col = order[f]
        out[f] = col[keep[col]]
    return out


def _mask(missing_mask, n_features: int) -> np.ndarray:
    if missing_mask is None:
        return np.ones(n_features, dtype=np.bool_)
    mask = np.asarray(missing_mask, dtype=np.bool_)
    if mask.shape != (n_features,):
        raise ValueError(f"missing_mask must have {n_features} entries")
    return np.ascontiguousarray(mask)


@dataclass
class BoostedModel:
    trees: list[Tree]
    params: BoostParams
    missing_mask: np.ndarray
    base_margin: float = 0.0
    seed: int = 0
    loss_history: list[float] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return len(self.missing_mask)

    def margin(self, X) -> np.ndarray:
        X = _as_matrix(X, self.n_features)
        out = np.full(len(X), self.base_margin, dtype=np.float64)
        lr = float(self.params.learning_rate)
        for t in self.trees:
            _add_tree(X, t.feature, t.threshold, t.missing_left, t.left, t.right, t.weight,
                      self.missing_mask, MISSING_VALUE, lr, out)
        return out

    def predict(self, X) -> np.ndarray:
        return sigmoid(self.margin(X))


@dataclass
class BaggedEnsemble:
    models: list[BoostedModel]
    seeds: list[int]

    def __post_init__(self):
        if len(self.models) != len(self.seeds):
            raise ValueError("one seed per member model")

    def member_predictions(self, X) -> np.ndarray:
        X = _as_matrix(X, self.models[0].n_features)
        return np.vstack([m.predict(X) for m in self.models])

    def predict(self, X) -> np.ndarray:
        preds = self.member_predictions(X)
        total = np.zeros(preds.shape[1], dtype=np.float64)
        for p in preds:
            total += p
        return total / len(self.models)


def _as_matrix(X, n_features: int | None = None) -> np.ndarray:
    if isinstance(X, np.ndarray):
        arr = X
    else:
        X = list(X)
        if X and hasattr(X[0], "values"):
            arr = np.vstack([r.values for r in X])
        elif not X:
            arr = np.zeros((0, n_features or 0))
        else:
            arr = np.asarray(X)
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        arr = arr.reshape(len(arr), -1) if arr.size else np.zeros((0, n_features or 0))
    return arr


def _as_xy(X, y):
    if y is None:
        rows = list(X)
        y = [1.0 if r.label else 0.0 for r in rows]
        if any(r.label is None for r in rows):
            raise ValueError("training rows must be labeled")
        X = rows
    return _as_matrix(X), np.asarray(y, dtype=np.float64)


def train(X, y=None, params: BoostParams = BoostParams(), seed: int = 0, missing_mask=None) -> BoostedModel:
    """Newton boosting for ``params.rounds`` rounds.

    ``X`` may be a matrix (with ``y``) or a sequence of labeled feature rows.
    Subsampling (``subsample < 1``) draws rows without replacement each
    round from ``numpy.random.default_rng(seed)``.
    """
    X, y = _as_xy(X, y)
    if len(X) == 0:
        raise ValueError("empty training set")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    if y.min() == y.max():
        raise ValueError("training set must contain both classes")
    mask = _mask(missing_mask, X.shape[1])
    rng = np.random.default_rng(seed)
    base_margin = math.log(params.base_score / (1.0 - params.base_score))
    margin = np.full(len(X), base_margin, dtype=np.float64)
    full_order = _presort(X)
    lr = float(params.learning_rate)
    n_sub = max(1, int(math.floor(params.subsample * len(X))))
    trees: list[Tree] = []
    history = [log_loss(sigmoid(margin), y)]
    for _ in range(params.rounds):
        p = sigmoid(margin)
        g, h = logistic_grad_hess(p, y)
        if params.subsample < 1.0:
            rows = np.sort(rng.choice(len(X), size=n_sub, replace=False))
            order = _subset_order(full_order, rows, len(X))
        else:
            order = full_order.copy()
        tree = _fit_sorted(X, g, h, order, mask, params)
        _add_tree(X, tree.feature, tree.threshold, tree.missing_left, tree.left, tree.right,
                  tree.weight, mask, MISSING_VALUE, lr, margin)
        trees.append(tree)
        history.append(log_loss(sigmoid(margin), y))
    return BoostedModel(trees, params, mask, base_margin, seed, history)


def bootstrap_indices(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, n, size=n)


def train_bagged(
    X, y=None, params: BoostParams = BoostParams(), n_bags: int = 8, master_seed: int = 0,
    missing_mask=None, bootstrap: bool = True, n_jobs: int = 1,
) -> BaggedEnsemble:
    """Train ``n_bags`` boosted models, bag ``b`` on a bootstrap drawn with seed ``master_seed + b``.

    ``bootstrap=False`` trains every member on the full set (so one bag
    reproduces :func:`train`). Members are independent; ``n_jobs > 1``
    trains them in worker processes with identical results.
    """
    X, y = _as_xy(X, y)
    if n_bags < 1:
        raise ValueError("n_bags must be >= 1")
    seeds = [master_seed + b for b in range(n_bags)]
    jobs = []
    for s in seeds:
        if bootstrap:
            idx = bootstrap_indices(len(X), s)
            yb = y[idx]
            if yb.min() == yb.max():
                raise ValueError(f"bootstrap for seed {s} drew a single class")
            jobs.append((X[idx], yb, params, s, missing_mask))
        else:
            jobs.append((X, y, params, s, missing_mask))
    if n_jobs > 1 and n_bags > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(min(n_jobs, n_bags)) as pool:
            models = list(pool.map(_train_job, jobs))
    else:
        models = [_train_job(j) for j in jobs]
    return BaggedEnsemble(models, seeds)


def _train_job(job):
    X, y, params, seed, mask = job
    return train(X, y, params, seed, mask)


def predict(model, X) -> np.ndarray:
    X = _as_matrix(X, _n_features(model))
    if len(X) == 0:
        return np.zeros(0, dtype=np.float64)
    return model.predict(X)


def _n_features(model) -> int:
    if isinstance(model, BaggedEnsemble):
        return model.models[0].n_features
    return model.n_features


# --------------------------------------------------------------------------
# serialization


def _fmt(x: float) -> str:
    return "%.17g" % x


def _write_model(out: io.StringIO, model: BoostedModel) -> None:
    p = model.params
    out.write(f"{MODEL_MAGIC} {FORMAT_VERSION}\n")
    out.write("params " + " ".join(f"{f.name}={_fmt(getattr(p, f.name)) if isinstance(getattr(p, f.name), float) else getattr(p, f.name)}"
                                   for f in fields(p)) + "\n")
    out.write(f"seed {model.seed}\n")
    out.write(f"base_margin {_fmt(model.base_margin)}\n")
    out.write(f"missing_value {_fmt(MISSING_VALUE)}\n")
    out.write("missing_mask " + "".join("1" if b else "0" for b in model.missing_mask) + "\n")
    out.write(f"trees {len(model.trees)}\n")
    for i, t in enumerate(model.trees):
        order = t.preorder()
        out.write(f"tree {i} {len(order)}\n")
        for node in order:
            if t.feature[node] >= 0:
                side = "left" if t.missing_left[node] else "right"
                out.write(f"split {int(t.feature[node]) + 1} {_fmt(t.threshold[node])} {side}\n")
            else:
                out.write(f"leaf {_fmt(t.weight[node])}\n")


def _parse_params(tokens: list[str]) -> BoostParams:
    kinds = {f.name: f.type for f in fields(BoostParams)}
    values = {}
    for tok in tokens:
        key, raw = tok.split("=", 1)
        values[key] = int(raw) if kinds[key] in ("int", int) else float(raw)
    return BoostParams(**values)


def _read_model(lines: Iterable[str]) -> BoostedModel:
    it = iter(lines)

    def expect(key):
        parts = next(it).split()
        if not parts or parts[0] != key:
            raise ValueError(f"expected {key!r} line, got {parts}")
        return parts[1:]

    magic = expect(MODEL_MAGIC)
    if int(magic[0]) != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {magic[0]}")
    params = _parse_params(expect("params"))
    seed = int(expect("seed")[0])
    base_margin = float(expect("base_margin")[0])
    if float(expect("missing_value")[0]) != MISSING_VALUE:
        raise ValueError("model was trained with a different missing code")
    mask = np.array([c == "1" for c in expect("missing_mask")[0]], dtype=np.bool_)
    n_trees = int(expect("trees")[0])
    trees = []
    for _ in range(n_trees):
        _, n_nodes = expect("tree")
        nodes = [next(it).split() for _ in range(int(n_nodes))]
        trees.append(_tree_from_preorder(nodes))
    return BoostedModel(trees, params, mask, base_margin, seed)


def _tree_from_preorder(nodes: list[list[str]]) -> Tree:
    n = len(nodes)
    feat = np.full(n, -1, np.int64)
    thr = np.zeros(n, np.float64)
    ml = np.zeros(n, np.bool_)
    left = np.full(n, -1, np.int64)
    right = np.full(n, -1, np.int64)
    weight = np.zeros(n, np.float64)
    pos = 0

    def build() -> int:
        nonlocal pos
        node = pos
        parts = nodes[pos]
        pos += 1
        if parts[0] == "leaf":
            weight[node] = float(parts[1])
        elif parts[0] == "split":
            feat[node] = int(parts[1]) - 1
            thr[node] = float(parts[2])
            ml[node] = parts[3] == "left"
            left[node] = build()
            right[node] = build()
        else:
            raise ValueError(f"bad node line {parts}")
        return node

    build()
    if pos != n:
        raise ValueError("trailing nodes in tree block")
    return Tree(feat, thr, ml, left, right, weight)


def dumps(model) -> str:
    out = io.StringIO()
    if isinstance(model, BaggedEnsemble):
        out.write(f"{ENSEMBLE_MAGIC} {FORMAT_VERSION}\n")
        out.write(f"models {len(model.models)}\n")
        out.write("seeds " + " ".join(str(s) for s in model.seeds) + "\n")
        for m in model.models:
            _write_model(out, m)
    else:
        _write_model(out, model)
    return out.getvalue()


def loads(text: str):
    lines = text.splitlines()
    head = lines[0].split()
    if head[0] == ENSEMBLE_MAGIC:
        n_models = int(lines[1].split()[1])
        seeds = [int(s) for s in lines[2].split()[1:]]
        it = iter(lines[3:])
        models = [_read_model(it) for _ in range(n_models)]
        return BaggedEnsemble(models, seeds)
    if head[0] == MODEL_MAGIC:
        return _read_model(lines)
    raise ValueError(f"not a model file (header {lines[0]!r})")


def save(model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(model))


def load(path):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


# --------------------------------------------------------------------------
# cross validation


@dataclass
class CVResult:
    overrides: dict
    fold_log_loss: list[float]
    fold_f05: list[float]

    @property
    def mean_log_loss(self) -> float:
        return float(np.mean(self.fold_log_loss))

    @property
    def mean_f05(self) -> float:
        return float(np.mean(self.fold_f05))


def fold_assignment(groups: Sequence[str], k: int, seed: int) -> dict[str, int]:
    """Deterministic group -> fold map: shuffle sorted groups, deal round-robin."""
    unique = sorted(set(groups))
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(unique) < k:
        raise ValueError(f"{len(unique)} groups cannot fill {k} folds")
    perm = np.random.default_rng(seed).permutation(len(unique))
    return {unique[j]: pos % k for pos, j in enumerate(perm)}


def _device_f05_proxy(device_ids, labels, probs) -> float:
    from .metrics import f05_device

    by_device: dict[str, list[tuple[float, int, bool]]] = {}
    for i, (d, y, p) in enumerate(zip(device_ids, labels, probs)):
        by_device.setdefault(d, []).append((p, i, bool(y)))
    scores = []
    for d in sorted(by_device):
        entries = by_device[d]
        chosen = {i for p, i, _ in entries if p >= 0.5}
        if not chosen:
            chosen = {max(entries, key=lambda e: (e[0], -e[1]))[1]}
        truth = {i for _, i, y in entries if y}
        scores.append(f05_device(chosen, truth).f05)
    return float(np.mean(scores))


def cross_validate(
    rows, param_grid: Sequence[Mapping] | None = None, k: int = 10, seed: int = 0,
    base_params: BoostParams = BoostParams(), missing_mask=None,
) -> list[CVResult]:
    """k-fold CV grouped by device for every grid point (a dict of BoostParams overrides).

    Reports per-fold log-loss and a device-averaged F0.5 proxy: cookies
    scoring at least 0.5, or the single best cookie when none does.
    """
    rows = list(rows)
    if len(rows) < k:
        raise ValueError(f"{len(rows)} rows cannot fill {k} folds")
    groups = [r.device_id for r in rows]
    folds = fold_assignment(groups, k, seed)
    fold_of = np.array([folds[g] for g in groups])
    X, y = _as_xy(rows, None)
    results = []
    for overrides in (param_grid or [{}]):
        params = base_params.with_overrides(**overrides)
        losses, f05s = [], []
        for fold in range(k):
            tr = fold_of != fold
            te = ~tr
            model = train(X[tr], y[tr], params, seed, missing_mask)
            p = model.predict(X[te])
            losses.append(log_loss(p, y[te]))
            f05s.append(_device_f05_proxy([groups[i] for i in np.flatnonzero(te)], y[te], p))
        results.append(CVResult(dict(overrides), losses, f05s))
    return results
