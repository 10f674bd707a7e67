"""Bag of Hemodynamic Features: per-class k-means codebooks, histogram encoding,
l2-regularized logistic regression and leave-one-out evaluation."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.model_selection import StratifiedShuffleSplit
from sklearn.pipeline import Pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._io import dump_json, load_json
from .exceptions import FoldError, InsufficientData, InvalidRegularization

K_GRID = tuple(range(2, 16))
LAMBDA_GRID = tuple(10.0**i for i in range(-3, 6))


# -- k-means -------------------------------------------------------------------


@dataclass
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    inertia: float
    inertia_history: list = field(default_factory=list)
    n_iter: int = 0


def _sq_dist(X, C):
    """Squared distances between rows of X (n, p) and centers C (..., k, p) -> (..., n, k)."""
    d = (X**2).sum(-1)[:, None] - 2.0 * np.matmul(X, np.swapaxes(C, -1, -2)) + (C**2).sum(-1)[..., None, :]
    return np.maximum(d, 0.0)


def kmeans(X, k: int, n_init: int = 50, max_iter: int = 300, random_state=None) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds; all restarts advance together.

    A restart stops once its assignments no longer change. The restart with the
    lowest inertia wins (lowest index on ties).
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if n < k:
        raise InsufficientData(f"{n} points cannot form {k} clusters")
    rng = np.random.default_rng(random_state)
    R = n_init

    # k-means++ seeding
    centers = np.empty((R, k, p))
    idx = rng.integers(n, size=R)
    centers[:, 0] = X[idx]
    d2 = ((X[None, :, :] - centers[:, :1]) ** 2).sum(-1)
    for j in range(1, k):
        cum = np.cumsum(d2, axis=1)
        u = rng.random(R) * cum[:, -1]
        pick = np.minimum((cum < u[:, None]).sum(axis=1), n - 1)
        centers[:, j] = X[pick]
        d2 = np.minimum(d2, ((X[None, :, :] - centers[:, j : j + 1]) ** 2).sum(-1))

    labels = np.full((R, n), -1)
    inertia_hist = np.zeros((max_iter, R))
    active = np.arange(R)
    it = 0
    for it in range(1, max_iter + 1):
        dist = _sq_dist(X, centers[active])
        new = dist.argmin(axis=2)
        inertia_hist[it - 1] = inertia_hist[it - 2] if it > 1 else 0.0
        inertia_hist[it - 1, active] = np.take_along_axis(dist, new[..., None], 2)[..., 0].sum(axis=1)
        moved = np.any(new != labels[active], axis=1)
        labels[active] = new
        active = active[moved]
        if not len(active):
            break
        lab = labels[active]
        flat = (lab + (np.arange(len(active)) * k)[:, None]).ravel()
        m = len(active) * k
        counts = np.bincount(flat, minlength=m)
        sums = np.empty((m, p))
        Xt = np.broadcast_to(X, (len(active), n, p)).reshape(-1, p)
        for q in range(p):
            sums[:, q] = np.bincount(flat, weights=Xt[:, q], minlength=m)
        nonempty = counts > 0
        blk = centers[active].reshape(m, p)
        blk[nonempty] = sums[nonempty] / counts[nonempty, None]
        centers[active] = blk.reshape(len(active), k, p)

    inertia = ((X[None] - np.take_along_axis(centers, labels[..., None], 1)) ** 2).sum(axis=(1, 2))
    best = int(np.argmin(inertia))
    return KMeansResult(
        centers=centers[best].copy(),
        labels=labels[best].copy(),
        inertia=float(inertia[best]),
        inertia_history=inertia_hist[:it, best].tolist(),
        n_iter=it,
    )


# -- codebook and encoding ------------------------------------------------------


@dataclass
class Codebook:
    """2k codes in standardized feature space: first k from class -1, last k from class +1."""

    k: int
    codes: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    def standardize(self, F):
        return (np.asarray(F, dtype=float) - self.mean) / self.std

    def nearest(self, F) -> np.ndarray:
        return _sq_dist(self.standardize(F), self.codes).argmin(axis=1)

    def encode(self, F) -> np.ndarray:
        F = np.asarray(F, dtype=float).reshape(-1, len(self.mean))
        return np.bincount(self.nearest(F), minlength=2 * self.k).astype(float) if len(F) else np.zeros(2 * self.k)

    def to_dict(self) -> dict:
        return {"k": self.k, "codes": self.codes.tolist(), "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Codebook":
        return cls(int(d["k"]), np.asarray(d["codes"], float), np.asarray(d["mean"], float), np.asarray(d["std"], float))


def _element_matrix(s) -> np.ndarray:
    return np.asarray(s.X if hasattr(s, "X") else s, dtype=float).reshape(len(s.X if hasattr(s, "X") else s), -1)


def build_codebook(sets, y, k: int, n_init: int = 50, max_iter: int = 300, random_state=None, standardize: bool = True) -> Codebook:
    """Pool elements per class, standardize with training statistics, cluster each class into k codes."""
    y = np.asarray(y)
    if not (np.any(y == -1) and np.any(y == 1)):
        raise InsufficientData("both classes are required to build a codebook")
    mats = [_element_matrix(s) for s in sets]
    pooled = np.vstack(mats)
    if standardize:
        mean = pooled.mean(axis=0)
        std = pooled.std(axis=0)
        std[std == 0] = 1.0
    else:
        mean, std = np.zeros(pooled.shape[1]), np.ones(pooled.shape[1])
    seeds = np.random.SeedSequence(random_state).spawn(2) if random_state is not None else [None, None]
    codes = []
    for cls_label, seed in zip((-1, 1), seeds):
        Z = (np.vstack([m for m, lab in zip(mats, y) if lab == cls_label]) - mean) / std
        if len(Z) < k:
            raise InsufficientData(f"class {cls_label:+d} has {len(Z)} elements, fewer than k={k}")
        codes.append(kmeans(Z, k, n_init, max_iter, np.random.default_rng(seed) if seed is not None else None).centers)
    return Codebook(k=k, codes=np.vstack(codes), mean=mean, std=std)


def encode(X, codebook: Codebook) -> np.ndarray:
    """Histogram of nearest-code counts; ties go to the lowest code index."""
    return codebook.encode(_element_matrix(X))


class BoHFEncoder(TransformerMixin, BaseEstimator):
    """Maps variable-size element sets to fixed-length code histograms (length 2k).

    ``X`` is a sequence of FeatureSets or of (n_i, p) arrays; ``y`` uses labels -1/+1.
    """

    def __init__(self, k=5, n_init=50, max_iter=300, random_state=0, standardize=True):
        self.k = k
        self.n_init = n_init
        self.max_iter = max_iter
        self.random_state = random_state
        self.standardize = standardize

    def fit(self, X, y):
        y = _as_pm1(y)
        self.codebook_ = build_codebook(X, y, self.k, self.n_init, self.max_iter, self.random_state, self.standardize)
        self.n_features_in_ = self.codebook_.codes.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "codebook_")
        return np.vstack([self.codebook_.encode(_element_matrix(s)) for s in X])


# -- logistic regression -----------------------------------------------------------


def _as_pm1(y) -> np.ndarray:
    y = np.asarray(y)
    vals = set(np.unique(y).tolist())
    if vals <= {-1, 1}:
        return y.astype(int)
    if vals <= {0, 1}:
        return np.where(y == 1, 1, -1)
    raise ValueError(f"labels must be -1/+1 (or 0/1), got {sorted(vals)}")


def logistic_objective(beta, intercept, X, y, lam) -> float:
    m = X @ beta + intercept
    return float(lam * beta @ beta + np.logaddexp(0.0, -y * m).sum())


def logistic_gradient(beta, intercept, X, y, lam):
    m = X @ beta + intercept
    s = expit(-y * m) * y
    return 2.0 * lam * beta - X.T @ s, -s.sum()


class L2LogisticRegression(ClassifierMixin, BaseEstimator):
    """Minimizes lam * ||beta||^2 + sum log(1 + exp(-y (<beta, x> + b))) by damped Newton steps.

    The intercept ``b`` is not penalized.
    """

    def __init__(self, lam=1.0, fit_intercept=True, tol=1e-8, max_iter=200):
        self.lam = lam
        self.fit_intercept = fit_intercept
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y, coef_init=None):
        if self.lam < 0:
            raise InvalidRegularization("lambda must be non-negative")
        X, y = check_X_y(X, y)
        y = _as_pm1(y)
        if len(np.unique(y)) < 2:
            raise ValueError("both labels must be present")
        n, p = X.shape
        w = np.zeros(p + 1) if coef_init is None else np.asarray(coef_init, dtype=float).copy()
        if len(w) == p:
            w = np.append(w, 0.0)
        if not self.fit_intercept:
            w[-1] = 0.0
        A = np.hstack([X, np.ones((n, 1))])
        reg = np.full(p + 1, 2.0 * self.lam)
        reg[-1] = 0.0

        def f(w):
            return logistic_objective(w[:-1], w[-1], X, y, self.lam)

        def grad(w):
            gb, gi = logistic_gradient(w[:-1], w[-1], X, y, self.lam)
            return np.append(gb, gi if self.fit_intercept else 0.0)

        fw = f(w)
        g = grad(w)
        self.n_iter_ = 0
        for self.n_iter_ in range(1, self.max_iter + 1):
            if np.linalg.norm(g) <= self.tol:
                break
            m = A @ w
            d = expit(m) * expit(-m)
            H = (A.T * d) @ A + np.diag(reg)
            if not self.fit_intercept:
                H[-1, :] = H[:, -1] = 0.0
                H[-1, -1] = 1.0
            try:
                step = np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(H, g, rcond=None)[0]
            t, slope = 1.0, g @ step
            while True:
                w_new = w - t * step
                f_new = f(w_new)
                if f_new <= fw - 1e-4 * t * slope or t < 1e-12:
                    break
                t *= 0.5
            if f_new > fw:  # no progress possible in floating point
                break
            w, fw = w_new, f_new
            g = grad(w)
        self.grad_norm_ = float(np.linalg.norm(g))
        if self.grad_norm_ > self.tol:
            warnings.warn(f"Newton solver stopped with gradient norm {self.grad_norm_:.3g}", ConvergenceWarning)
        self.coef_ = w[:-1]
        self.intercept_ = float(w[-1])
        self.objective_ = fw
        self.classes_ = np.array([-1, 1])
        self.n_features_in_ = p
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return X @ self.coef_ + self.intercept_

    def predict(self, X):
        return np.where(self.decision_function(X) > 0, 1, -1)

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])


def make_bohf_classifier(k=5, lam=1.0, random_state=0, n_init=50, max_iter=300) -> Pipeline:
    return Pipeline(
        [
            ("bohf", BoHFEncoder(k=k, n_init=n_init, max_iter=max_iter, random_state=random_state)),
            ("scale", StandardScaler()),
            ("logreg", L2LogisticRegression(lam=lam)),
        ]
    )


def save_model(model: Pipeline, path) -> None:
    enc, scale, clf = model.named_steps["bohf"], model.named_steps["scale"], model.named_steps["logreg"]
    dump_json(
        path,
        {
            "codebook": enc.codebook_.to_dict(),
            "encoded_mean": scale.mean_.tolist(),
            "encoded_scale": scale.scale_.tolist(),
            "lambda": clf.lam,
            "beta": clf.coef_.tolist(),
            "intercept": clf.intercept_,
            "random_state": enc.random_state,
        },
    )


def load_model(path) -> Pipeline:
    d = load_json(path)
    cb = Codebook.from_dict(d["codebook"])
    model = make_bohf_classifier(k=cb.k, lam=d["lambda"], random_state=d["random_state"])
    enc, scale, clf = model.named_steps["bohf"], model.named_steps["scale"], model.named_steps["logreg"]
    enc.codebook_, enc.n_features_in_ = cb, cb.codes.shape[1]
    scale.mean_ = np.asarray(d["encoded_mean"])
    scale.scale_ = np.asarray(d["encoded_scale"])
    scale.var_ = scale.scale_**2
    scale.n_features_in_ = len(scale.mean_)
    scale.n_samples_seen_ = 0
    clf.coef_, clf.intercept_ = np.asarray(d["beta"]), float(d["intercept"])
    clf.classes_, clf.n_features_in_ = np.array([-1, 1]), len(clf.coef_)
    return model


# -- evaluation ---------------------------------------------------------------------


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with midranks for ties."""
    labels = _as_pm1(labels)
    scores = np.asarray(scores, dtype=float)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


@dataclass
class FoldResult:
    index: int
    subject_id: str
    label: int
    score: float  # <beta, z>: ranking score used for the AUC
    decision: float  # score + intercept: its sign is the predicted class
    k: int
    lam: float
    val_accuracy: float
    model: Pipeline | None = field(default=None, repr=False)


def select_hyperparameters(sets, y, k_grid, lambda_grid, seed, val_fraction=0.25, n_init=50, max_iter=300):
    """Pick (k, lambda) maximizing accuracy on a stratified random validation split.

    Ties keep the earliest candidate in grid order.
    """
    y = np.asarray(y)
    splitter = StratifiedShuffleSplit(n_splits=1, test_size=val_fraction, random_state=seed % (2**32))
    try:
        fit_idx, val_idx = next(splitter.split(np.zeros(len(y)), y))
    except ValueError:
        # too few subjects to stratify; validate on the training set itself
        fit_idx = val_idx = np.arange(len(y))
    if len(np.unique(y[fit_idx])) < 2:
        fit_idx = val_idx = np.arange(len(y))
    fit_sets = [sets[i] for i in fit_idx]
    val_sets = [sets[i] for i in val_idx]
    best = (-1.0, None, None)
    for k in k_grid:
        enc = BoHFEncoder(k=k, n_init=n_init, max_iter=max_iter, random_state=seed)
        try:
            Xf = enc.fit_transform(fit_sets, y[fit_idx])
        except InsufficientData:
            continue
        scaler = StandardScaler().fit(Xf)
        Zf, Zv = scaler.transform(Xf), scaler.transform(enc.transform(val_sets))
        for lam in lambda_grid:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                clf = L2LogisticRegression(lam=lam).fit(Zf, y[fit_idx])
            acc = float(np.mean(clf.predict(Zv) == y[val_idx]))
            if acc > best[0]:
                best = (acc, k, lam)
    if best[1] is None:
        raise InsufficientData("no k in the grid could be fitted")
    return best[1], best[2], best[0]


def run_fold(sets, y, index, k_grid=K_GRID, lambda_grid=LAMBDA_GRID, seed=0, val_fraction=0.25,
             n_init=50, max_iter=300, subject_ids=None, keep_model=False) -> FoldResult:
    """Hold out subject ``index``; tune, fit and score on the remaining subjects only."""
    y = _as_pm1(y)
    train = [i for i in range(len(sets)) if i != index]
    y_train = y[train]
    if len(np.unique(y_train)) < 2:
        raise FoldError(f"fold {index}: training set has a single class")
    s = fold_seed(seed, index)
    train_sets = [sets[i] for i in train]
    k, lam, val_acc = select_hyperparameters(train_sets, y_train, k_grid, lambda_grid, s, val_fraction, n_init, max_iter)
    model = make_bohf_classifier(k=k, lam=lam, random_state=s, n_init=n_init, max_iter=max_iter)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        model.fit(train_sets, y_train)
    decision = float(model.decision_function([sets[index]])[0])
    # The intercept tracks the training class balance, which in leave-one-out is
    # anti-correlated with the held-out label; ranking by <beta, z> avoids that bias.
    score = decision - model.named_steps["logreg"].intercept_
    sid = subject_ids[index] if subject_ids is not None else str(index)
    return FoldResult(index, sid, int(y[index]), score, decision, k, lam, val_acc, model if keep_model else None)


@dataclass
class LOOCVResult:
    auc: float
    accuracy: float
    folds: list

    @property
    def scores(self) -> np.ndarray:
        return np.array([f.score for f in self.folds])

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "accuracy": self.accuracy,
            "folds": [
                {"subject_id": f.subject_id, "label": f.label, "score": f.score, "decision": f.decision, "k": f.k,
                 "lambda": f.lam, "val_accuracy": f.val_accuracy}
                for f in self.folds
            ],
        }


def loocv_evaluate(sets, y, k_grid=K_GRID, lambda_grid=LAMBDA_GRID, seed=0, val_fraction=0.25,
                   n_init=50, max_iter=300, n_jobs=1, subject_ids=None) -> LOOCVResult:
    """Leave-one-out AUC and accuracy; each fold's seed derives from (seed, fold index)."""
    y = _as_pm1(y)
    for c in (-1, 1):
        if np.sum(y == c) < 2:
            raise FoldError("LOOCV needs at least two subjects per class")
    kwargs = dict(k_grid=k_grid, lambda_grid=lambda_grid, seed=seed, val_fraction=val_fraction,
                  n_init=n_init, max_iter=max_iter, subject_ids=subject_ids)
    if n_jobs == 1:
        folds = [run_fold(sets, y, i, **kwargs) for i in range(len(sets))]
    else:
        from joblib import Parallel, delayed

        folds = Parallel(n_jobs=n_jobs)(delayed(run_fold)(sets, y, i, **kwargs) for i in range(len(sets)))
    auc = roc_auc([f.score for f in folds], y)
    decisions = np.array([f.decision for f in folds])
    accuracy = float(np.mean(np.where(decisions > 0, 1, -1) == y))
    return LOOCVResult(auc=auc, accuracy=accuracy, folds=folds)


__all__ = [
    "BoHFEncoder", "Codebook", "L2LogisticRegression", "LOOCVResult", "FoldResult", "build_codebook", "encode",
    "kmeans", "loocv_evaluate", "make_bohf_classifier", "roc_auc", "run_fold", "save_model", "load_model",
]
