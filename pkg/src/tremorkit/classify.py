"""Motor-task learners: decision tree (Gini, best-first), discriminant
analysis (pooled covariance with diagonal shrinkage), linear SVM (one-vs-one
SMO dual solver) and kNN, plus stratified k-fold cross-validation.

All algorithms standardize features using statistics fit on their own
training data ("automatic scale"), predict deterministically, and break ties
by lowest class index. Models serialize to a versioned JSON document.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .features import Dataset
from .metrics import ConfusionMatrix, confusion

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    """Algorithm choice plus its hyperparameters.

    dt: Gini impurity, best-first growth, at most ``max_splits`` splits.
    da: pooled full covariance shrunk toward its diagonal by ``shrinkage``.
    svm: linear kernel, one-vs-one, box constraint C, SMO stop tolerance.
    knn: ``n_neighbors`` with Euclidean or cosine metric.
    """

    algorithm: str
    max_splits: int = 100
    min_leaf: int = 1
    shrinkage: float = 0.1
    box_constraint: float = 1.0
    kkt_tol: float = 1e-3
    n_neighbors: int = 1
    metric: str = "euclidean"
    standardize: bool = True

    def __post_init__(self):
        if self.algorithm not in ("dt", "da", "svm", "knn"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.max_splits < 1 or self.min_leaf < 1:
            raise ValueError("max_splits and min_leaf must be >= 1")
        if not 0.0 <= self.shrinkage <= 1.0:
            raise ValueError("shrinkage must be in [0, 1]")
        if self.box_constraint <= 0 or self.kkt_tol <= 0:
            raise ValueError("box_constraint and kkt_tol must be positive")
        if self.n_neighbors < 1:
            raise ValueError("n_neighbors must be >= 1")
        if self.metric not in ("euclidean", "cosine"):
            raise ValueError(f"unknown metric {self.metric!r}")


def fine_knn() -> ModelSpec:
    return ModelSpec("knn", n_neighbors=1, metric="euclidean")


def cosine_knn() -> ModelSpec:
    return ModelSpec("knn", n_neighbors=10, metric="cosine")


# --------------------------------------------------------------------------
# Standardization
# --------------------------------------------------------------------------

@dataclass
class Standardizer:
    """Z-scoring fit on training data; zero-variance features are dropped."""

    mean: np.ndarray
    scale: np.ndarray
    kept: np.ndarray           # column indices retained

    @classmethod
    def fit(cls, X: np.ndarray, enabled: bool = True) -> "Standardizer":
        p = X.shape[1]
        if not enabled:
            return cls(mean=np.zeros(p), scale=np.ones(p), kept=np.arange(p))
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        # rounding in the mean can leave ~1e-16 "variance" on constant columns
        kept = np.nonzero(scale > 1e-12 * np.maximum(1.0, np.abs(mean)))[0]
        if kept.size < p:
            warnings.warn(f"dropping {p - kept.size} zero-variance feature(s)")
        if kept.size == 0:
            raise ValueError("all features have zero variance")
        return cls(mean=mean[kept], scale=scale[kept], kept=kept)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X[:, self.kept] - self.mean) / self.scale

    def to_doc(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist(),
                "kept": self.kept.tolist()}

    @classmethod
    def from_doc(cls, doc: dict) -> "Standardizer":
        return cls(mean=np.asarray(doc["mean"]), scale=np.asarray(doc["scale"]),
                   kept=np.asarray(doc["kept"], dtype=np.int64))


# --------------------------------------------------------------------------
# Decision tree
# --------------------------------------------------------------------------

def gini_impurity(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - np.sum(p * p))


def _best_split(X: np.ndarray, y_idx: np.ndarray, n_classes: int, min_leaf: int):
    """Best (feature, threshold, gain) over all features of one node.

    Gain is the impurity decrease weighted by the node's sample count.
    """
    n, p = X.shape
    if n < 2 * min_leaf:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    y_sorted = y_idx[order]                                   # (n, p)
    onehot = np.equal(y_sorted[:, :, None], np.arange(n_classes)[None, None, :])
    left_counts = np.cumsum(onehot, axis=0).astype(np.float64)  # (n, p, K)
    total = left_counts[-1]                                   # (p, K)
    parent_gini = gini_impurity(total[0])
    cut_counts = left_counts[:-1]                             # split after position s
    nL = np.arange(1, n)[:, None]
    nR = n - nL
    sumsqL = np.sum(cut_counts * cut_counts, axis=2)
    right = total[None, :, :] - cut_counts
    sumsqR = np.sum(right * right, axis=2)
    giniL = 1.0 - sumsqL / (nL * nL)
    giniR = 1.0 - sumsqR / (nR * nR)
    weighted = (nL * giniL + nR * giniR) / n
    X_sorted = np.take_along_axis(X, order, axis=0)
    valid = X_sorted[1:] > X_sorted[:-1]
    valid &= (nL >= min_leaf) & (nR >= min_leaf)
    weighted = np.where(valid, weighted, np.inf)
    flat = int(np.argmin(weighted))
    s, j = np.unravel_index(flat, weighted.shape)
    if not np.isfinite(weighted[s, j]):
        return None
    gain = (parent_gini - weighted[s, j]) * n
    if gain <= 1e-12:
        return None
    threshold = 0.5 * (X_sorted[s, j] + X_sorted[s + 1, j])
    return int(j), float(threshold), float(gain)


@dataclass
class _TreeNode:
    counts: np.ndarray
    feature: Optional[int] = None
    threshold: float = 0.0
    left: Optional["_TreeNode"] = None
    right: Optional["_TreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def to_doc(self) -> dict:
        doc = {"counts": self.counts.tolist()}
        if not self.is_leaf:
            doc.update(feature=self.feature, threshold=self.threshold,
                       left=self.left.to_doc(), right=self.right.to_doc())
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "_TreeNode":
        node = cls(counts=np.asarray(doc["counts"], dtype=np.float64))
        if "feature" in doc:
            node.feature = doc["feature"]
            node.threshold = doc["threshold"]
            node.left = cls.from_doc(doc["left"])
            node.right = cls.from_doc(doc["right"])
        return node


def _grow_tree(X: np.ndarray, y_idx: np.ndarray, n_classes: int,
               max_splits: int, min_leaf: int) -> _TreeNode:
    """Best-first CART: repeatedly split the frontier leaf with the largest
    impurity gain until ``max_splits`` splits are spent or nothing improves."""

    def node_counts(idx):
        return np.bincount(y_idx[idx], minlength=n_classes).astype(np.float64)

    root_idx = np.arange(X.shape[0])
    root = _TreeNode(counts=node_counts(root_idx))
    frontier = []

    def consider(node, idx):
        if np.unique(y_idx[idx]).size < 2:
            return
        found = _best_split(X[idx], y_idx[idx], n_classes, min_leaf)
        if found is not None:
            j, thr, gain = found
            frontier.append((gain, len(frontier), node, idx, j, thr))

    consider(root, root_idx)
    splits = 0
    while frontier and splits < max_splits:
        frontier.sort(key=lambda item: (-item[0], item[1]))
        gain, _, node, idx, j, thr = frontier.pop(0)
        mask = X[idx, j] <= thr
        left_idx, right_idx = idx[mask], idx[~mask]
        node.feature, node.threshold = j, thr
        node.left = _TreeNode(counts=node_counts(left_idx))
        node.right = _TreeNode(counts=node_counts(right_idx))
        splits += 1
        consider(node.left, left_idx)
        consider(node.right, right_idx)
    return root


# --------------------------------------------------------------------------
# SMO dual solver for the linear SVM
# --------------------------------------------------------------------------

@dataclass
class BinarySvm:
    """Soft-margin linear machine trained by maximal-violating-pair SMO."""

    w: np.ndarray
    b: float
    alphas: np.ndarray
    kkt_residual: float
    objective_trace: list[float] = field(default_factory=list)

    def decision(self, X: np.ndarray) -> np.ndarray:
        return X @ self.w + self.b


def smo_train(X: np.ndarray, y: np.ndarray, c: float, tol: float,
              max_iter: int = 100_000, record_objective: bool = False) -> BinarySvm:
    """Maximize the SVM dual for labels y in {-1, +1} with a linear kernel.

    Stops when the maximal KKT violating pair is within ``tol``. The dual
    objective is non-decreasing across iterations by construction; a trace is
    kept when ``record_objective`` is set.
    """
    n = X.shape[0]
    K = X @ X.T
    alphas = np.zeros(n)
    f = np.zeros(n)          # f_i = sum_j alpha_j y_j K_ij
    trace: list[float] = []

    def objective() -> float:
        ay = alphas * y
        return float(alphas.sum() - 0.5 * ay @ K @ ay)

    m_val = mm_val = 0.0
    for _ in range(max_iter):
        up = ((y > 0) & (alphas < c - 1e-12)) | ((y < 0) & (alphas > 1e-12))
        low = ((y > 0) & (alphas > 1e-12)) | ((y < 0) & (alphas < c - 1e-12))
        if not up.any() or not low.any():
            break
        kkt_gap = y - f                        # y_i - f_i, the per-sample bias vote
        cand_up = np.where(up, kkt_gap, -np.inf)
        cand_low = np.where(low, kkt_gap, np.inf)
        i = int(np.argmax(cand_up))
        j = int(np.argmin(cand_low))
        m_val, mm_val = float(cand_up[i]), float(cand_low[j])
        if m_val - mm_val <= tol:
            break
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if eta <= 1e-12:
            eta = 1e-12
        e_i = f[i] - y[i]
        e_j = f[j] - y[j]
        a_j_old, a_i_old = alphas[j], alphas[i]
        a_j = a_j_old + y[j] * (e_i - e_j) / eta
        if y[i] == y[j]:
            lo, hi = max(0.0, a_i_old + a_j_old - c), min(c, a_i_old + a_j_old)
        else:
            lo, hi = max(0.0, a_j_old - a_i_old), min(c, c + a_j_old - a_i_old)
        a_j = min(max(a_j, lo), hi)
        a_i = a_i_old + y[i] * y[j] * (a_j_old - a_j)
        alphas[i], alphas[j] = a_i, a_j
        f += (a_i - a_i_old) * y[i] * K[:, i] + (a_j - a_j_old) * y[j] * K[:, j]
        if record_objective:
            trace.append(objective())

    b = 0.5 * (m_val + mm_val)
    w = X.T @ (alphas * y)
    margins = y * (X @ w + b)
    resid = np.where(alphas <= 1e-9, np.maximum(0.0, 1.0 - margins),
                     np.where(alphas >= c - 1e-9, np.maximum(0.0, margins - 1.0),
                              np.abs(margins - 1.0)))
    return BinarySvm(w=w, b=float(b), alphas=alphas,
                     kkt_residual=float(resid.max()), objective_trace=trace)


# --------------------------------------------------------------------------
# Trained model
# --------------------------------------------------------------------------

@dataclass
class TrainedModel:
    """A fitted classifier plus the standardization it was trained with."""

    spec: ModelSpec
    classes: tuple[str, ...]
    standardizer: Standardizer
    layout_digest: str = ""
    tree: Optional[_TreeNode] = None
    da_coef: Optional[np.ndarray] = None        # (K, p)
    da_intercept: Optional[np.ndarray] = None   # (K,)
    svm_machines: Optional[list[tuple[int, int, BinarySvm]]] = None
    knn_X: Optional[np.ndarray] = None
    knn_y: Optional[np.ndarray] = None

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        """Per-class scores, one row per sample (used for ROC curves)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        Xs = self.standardizer.transform(X)
        k = len(self.classes)
        if self.spec.algorithm == "dt":
            out = np.empty((Xs.shape[0], k))
            for r, row in enumerate(Xs):
                node = self.tree
                while not node.is_leaf:
                    node = node.left if row[node.feature] <= node.threshold else node.right
                out[r] = node.counts / max(1.0, node.counts.sum())
            return out
        if self.spec.algorithm == "da":
            return Xs @ self.da_coef.T + self.da_intercept
        if self.spec.algorithm == "svm":
            scores = np.zeros((Xs.shape[0], k))
            for a, b, machine in self.svm_machines:
                dec = machine.decision(Xs)
                scores[:, a] += dec
                scores[:, b] -= dec
            return scores
        # knn: vote fractions
        out = np.zeros((Xs.shape[0], k))
        for r, row in enumerate(Xs):
            idx = self._neighbor_indices(row)
            for i in idx:
                out[r, self.knn_y[i]] += 1.0
        return out / self.spec.n_neighbors

    def _neighbor_indices(self, row: np.ndarray) -> np.ndarray:
        if self.spec.metric == "euclidean":
            d = np.sqrt(np.sum((self.knn_X - row) ** 2, axis=1))
        else:
            norms = np.linalg.norm(self.knn_X, axis=1) * np.linalg.norm(row)
            with np.errstate(invalid="ignore", divide="ignore"):
                cos = np.where(norms > 0, self.knn_X @ row / norms, 0.0)
            d = 1.0 - cos
        order = np.argsort(d, kind="stable")   # distance ties resolved by index
        return order[: self.spec.n_neighbors]

    def predict(self, X: np.ndarray) -> list[str]:
        """Deterministic labels; all ties break toward the lowest class index."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.spec.algorithm == "svm":
            Xs = self.standardizer.transform(X)
            k = len(self.classes)
            votes = np.zeros((Xs.shape[0], k))
            sums = np.zeros((Xs.shape[0], k))
            for a, b, machine in self.svm_machines:
                dec = machine.decision(Xs)
                win_a = dec >= 0.0
                votes[win_a, a] += 1
                votes[~win_a, b] += 1
                sums[:, a] += dec
                sums[:, b] -= dec
            out = []
            for r in range(Xs.shape[0]):
                best = np.nonzero(votes[r] == votes[r].max())[0]
                if best.size > 1:                       # vote tie: summed decisions
                    sub = sums[r, best]
                    best = best[np.nonzero(sub == sub.max())[0]]
                out.append(self.classes[int(best[0])])
            return out
        scores = self.predict_scores(X)
        return [self.classes[int(np.argmax(row))] for row in scores]

    def predict_one(self, x: np.ndarray) -> str:
        return self.predict(np.atleast_2d(x))[0]

    def max_kkt_residual(self) -> float:
        if self.spec.algorithm != "svm":
            raise ValueError("KKT residuals are an SVM property")
        return max(m.kkt_residual for _, _, m in self.svm_machines)

    # -- serialization ------------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "format_version": MODEL_FORMAT_VERSION,
            "algorithm": self.spec.algorithm,
            "hyperparams": {
                "max_splits": self.spec.max_splits, "min_leaf": self.spec.min_leaf,
                "shrinkage": self.spec.shrinkage,
                "box_constraint": self.spec.box_constraint, "kkt_tol": self.spec.kkt_tol,
                "n_neighbors": self.spec.n_neighbors, "metric": self.spec.metric,
                "standardize": self.spec.standardize,
            },
            "classes": list(self.classes),
            "standardization": self.standardizer.to_doc(),
            "layout_hash": self.layout_digest,
            "parameters": {},
        }
        if self.spec.algorithm == "dt":
            doc["parameters"]["tree"] = self.tree.to_doc()
        elif self.spec.algorithm == "da":
            doc["parameters"]["coef"] = self.da_coef.tolist()
            doc["parameters"]["intercept"] = self.da_intercept.tolist()
        elif self.spec.algorithm == "svm":
            doc["parameters"]["machines"] = [
                {"a": a, "b": b, "w": m.w.tolist(), "bias": m.b,
                 "alphas": m.alphas.tolist(), "kkt_residual": m.kkt_residual}
                for a, b, m in self.svm_machines
            ]
        else:
            doc["parameters"]["train_X"] = self.knn_X.tolist()
            doc["parameters"]["train_y"] = self.knn_y.tolist()
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "TrainedModel":
        doc = json.loads(text)
        if doc.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format {doc.get('format_version')!r}")
        spec = ModelSpec(algorithm=doc["algorithm"], **doc["hyperparams"])
        model = cls(spec=spec, classes=tuple(doc["classes"]),
                    standardizer=Standardizer.from_doc(doc["standardization"]),
                    layout_digest=doc.get("layout_hash", ""))
        params = doc["parameters"]
        if spec.algorithm == "dt":
            model.tree = _TreeNode.from_doc(params["tree"])
        elif spec.algorithm == "da":
            model.da_coef = np.asarray(params["coef"])
            model.da_intercept = np.asarray(params["intercept"])
        elif spec.algorithm == "svm":
            model.svm_machines = [
                (m["a"], m["b"],
                 BinarySvm(w=np.asarray(m["w"]), b=m["bias"],
                           alphas=np.asarray(m["alphas"]),
                           kkt_residual=m["kkt_residual"]))
                for m in params["machines"]
            ]
        else:
            model.knn_X = np.asarray(params["train_X"])
            model.knn_y = np.asarray(params["train_y"], dtype=np.int64)
        return model


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------

def train(spec: ModelSpec, data: Dataset, record_objective: bool = False) -> TrainedModel:
    """Fit the requested model on the whole dataset."""
    if len(data) < 2:
        raise ValueError("need at least 2 training rows")
    classes = tuple(sorted(set(data.y)))
    if len(classes) < 2:
        raise ValueError("training data must contain at least 2 classes")
    class_index = {label: i for i, label in enumerate(classes)}
    y_idx = np.array([class_index[label] for label in data.y], dtype=np.int64)
    std = Standardizer.fit(data.X, enabled=spec.standardize)
    Xs = std.transform(data.X)
    model = TrainedModel(spec=spec, classes=classes, standardizer=std,
                         layout_digest=data.layout.digest() if len(data.layout) else "")

    if spec.algorithm == "dt":
        model.tree = _grow_tree(Xs, y_idx, len(classes), spec.max_splits, spec.min_leaf)
    elif spec.algorithm == "da":
        means = np.vstack([Xs[y_idx == i].mean(axis=0) for i in range(len(classes))])
        centered = Xs - means[y_idx]
        pooled = centered.T @ centered / max(1, len(data) - len(classes))
        gamma = spec.shrinkage
        sigma = (1.0 - gamma) * pooled + gamma * np.diag(np.diag(pooled))
        try:
            chol = np.linalg.cholesky(sigma)   # rejects the singular p >> n case
        except np.linalg.LinAlgError as exc:
            raise ValueError(
                "pooled covariance is singular; raise the shrinkage") from exc
        coef = np.linalg.solve(chol.T, np.linalg.solve(chol, means.T)).T   # (K, p)
        priors = np.bincount(y_idx, minlength=len(classes)) / len(data)
        intercept = -0.5 * np.sum(coef * means, axis=1) + np.log(priors)
        model.da_coef = coef
        model.da_intercept = intercept
    elif spec.algorithm == "svm":
        machines = []
        for a in range(len(classes)):
            for b in range(a + 1, len(classes)):
                sel = (y_idx == a) | (y_idx == b)
                yb = np.where(y_idx[sel] == a, 1.0, -1.0)
                machines.append((a, b, smo_train(Xs[sel], yb, spec.box_constraint,
                                                 spec.kkt_tol,
                                                 record_objective=record_objective)))
        model.svm_machines = machines
    else:
        model.knn_X = Xs
        model.knn_y = y_idx
    return model


# --------------------------------------------------------------------------
# Cross-validation
# --------------------------------------------------------------------------

@dataclass
class CvReport:
    spec: ModelSpec
    labels: tuple[str, ...]
    fold_matrices: list[ConfusionMatrix]
    pooled: ConfusionMatrix
    accuracy: float
    fold_of_row: np.ndarray
    seed: int
    scores: Optional[np.ndarray] = None      # (n, K) validation-fold scores
    y_true: Optional[list[str]] = None

    def fold_sum_equals_pooled(self) -> bool:
        total = sum((m.counts for m in self.fold_matrices),
                    np.zeros_like(self.pooled.counts))
        return bool(np.array_equal(total, self.pooled.counts))

    def roc(self, label: str):
        """One-vs-rest ROC/AUC over the pooled cross-validated scores."""
        from .metrics import roc_auc
        i = self.labels.index(label)
        return roc_auc(self.scores[:, i], self.y_true, label)

    def fold_rocs(self, label: str) -> list:
        """Per-fold ROC/AUC for one class (folds lacking both outcomes are
        skipped)."""
        from .metrics import roc_auc
        i = self.labels.index(label)
        out = []
        for fold in range(len(self.fold_matrices)):
            rows = np.nonzero(self.fold_of_row == fold)[0]
            truth = [self.y_true[r] for r in rows]
            if label in truth and any(t != label for t in truth):
                out.append(roc_auc(self.scores[rows, i], truth, label))
        return out


def stratified_folds(y: Sequence[str], k: int, seed: int) -> np.ndarray:
    """Seeded stratified fold assignment; every class needs >= k members."""
    y = list(y)
    rng = np.random.default_rng(seed)
    fold_of_row = np.full(len(y), -1, dtype=np.int64)
    for label in sorted(set(y)):
        idx = np.array([i for i, lb in enumerate(y) if lb == label])
        if idx.size < k:
            raise ValueError(f"class {label!r} has {idx.size} rows, fewer than k={k}")
        rng.shuffle(idx)
        for pos, row in enumerate(idx):
            fold_of_row[row] = pos % k
    return fold_of_row


def cross_validate(spec: ModelSpec, data: Dataset, k: int = 5, seed: int = 0) -> CvReport:
    """Stratified k-fold CV with standardization re-fit inside each training
    fold; returns per-fold and pooled confusion matrices."""
    labels = tuple(sorted(set(data.y)))
    fold_of_row = stratified_folds(data.y, k, seed)
    fold_matrices = []
    pooled = ConfusionMatrix(np.zeros((len(labels), len(labels)), dtype=np.int64), labels)
    scores = np.zeros((len(data), len(labels)))
    for fold in range(k):
        val = fold_of_row == fold
        tr = ~val
        train_set = Dataset(X=data.X[tr], y=[data.y[i] for i in np.nonzero(tr)[0]],
                            layout=data.layout)
        model = train(spec, train_set)
        preds = model.predict(data.X[val])
        scores[val] = model.predict_scores(data.X[val])
        truth = [data.y[i] for i in np.nonzero(val)[0]]
        cmat = confusion(truth, preds, labels)
        fold_matrices.append(cmat)
        pooled = pooled + cmat
    accuracy = float(np.trace(pooled.counts)) / max(1, pooled.n)
    return CvReport(spec=spec, labels=labels, fold_matrices=fold_matrices,
                    pooled=pooled, accuracy=accuracy, fold_of_row=fold_of_row,
                    seed=seed, scores=scores, y_true=list(data.y))
