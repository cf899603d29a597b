"""Gradient-boosted regression trees with exact greedy split search.

Each round computes first and second derivatives of the loss at the
current margins, grows one tree per class by exhaustively scanning every
(feature, observed value) threshold, and adds the shrunken leaf weights to
the margins. A split of node rows I into I_L / I_R scores

    gain = 1/2 * [G_L^2/(H_L+lam) + G_R^2/(H_R+lam) - G^2/(H+lam)] - gamma

and leaves get weight -soft_threshold(G, alpha) / (H + lam), scaled by eta.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

# relative tolerance under which two split gains count as equal
GAIN_TIE_RTOL = 1e-12


class Objective(str, Enum):
    BINARY_LOGISTIC = "binary:logistic"
    SOFTMAX = "multi:softmax"


@dataclass
class GbtParams:
    max_depth: int = 6
    eta: float = 0.3
    gamma: float = 0.0
    min_child_weight: float = 1.0
    reg_lambda: float = 1.0
    alpha: float = 0.0
    nrounds: int = 10
    subsample: float = 1.0
    objective: Objective = Objective.BINARY_LOGISTIC
    seed: int = 0
    early_stopping_rounds: int | None = None

    def __post_init__(self):
        self.objective = Objective(self.objective)
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must be in (0, 1]")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample must be in (0, 1]")
        if self.nrounds < 1:
            raise ValueError("nrounds must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.reg_lambda < 0 or self.alpha < 0 or self.min_child_weight < 0:
            raise ValueError("regularisers must be non-negative")
        if self.early_stopping_rounds is not None and self.early_stopping_rounds < 1:
            raise ValueError("early_stopping_rounds must be >= 1")

    @classmethod
    def gender_preset(cls, **overrides) -> GbtParams:
        base = dict(
            max_depth=10,
            eta=0.1,
            gamma=0.0,
            min_child_weight=0.9,
            reg_lambda=0.0,
            alpha=0.9,
            nrounds=150,
            subsample=1.0,
            objective=Objective.BINARY_LOGISTIC,
        )
        return cls(**{**base, **overrides})

    @classmethod
    def age_preset(cls, **overrides) -> GbtParams:
        base = dict(
            max_depth=20,
            eta=0.1,
            gamma=0.0,
            min_child_weight=0.9,
            reg_lambda=0.0,
            alpha=0.9,
            nrounds=50,
            subsample=1.0,
            objective=Objective.SOFTMAX,
        )
        return cls(**{**base, **overrides})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["objective"] = self.objective.value
        return d


def split_gain(g_left, h_left, g_right, h_right, reg_lambda=0.0, gamma=0.0):
    """Split score from gradient/hessian sums of the two children.

    Terms whose denominator is zero contribute 0. Broadcasts over arrays.
    """
    g_left = np.asarray(g_left, dtype=float)
    g_right = np.asarray(g_right, dtype=float)
    h_left = np.asarray(h_left, dtype=float)
    h_right = np.asarray(h_right, dtype=float)
    if np.any(h_left < 0) or np.any(h_right < 0):
        raise ValueError("hessian sums must be non-negative")
    gain = 0.5 * (
        _score(g_left, h_left, reg_lambda)
        + _score(g_right, h_right, reg_lambda)
        - _score(g_left + g_right, h_left + h_right, reg_lambda)
    ) - gamma
    return float(gain) if gain.ndim == 0 else gain


def _score(g, h, lam):
    den = h + lam
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, g * g / np.where(den > 0, den, 1.0), 0.0)


def leaf_weight(g_sum: float, h_sum: float, reg_lambda: float, alpha: float) -> float:
    shrunk = math.copysign(max(abs(g_sum) - alpha, 0.0), g_sum)
    den = h_sum + reg_lambda
    return 0.0 if den <= 0 else -shrunk / den


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def logistic_grad_hess(margin: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of the log loss w.r.t. the raw margin."""
    p = sigmoid(margin)
    return p - y, p * (1.0 - p)


def softmax_grad_hess(margins: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-class derivatives for softmax cross-entropy; ``y`` holds class indices."""
    p = softmax(margins)
    onehot = np.zeros_like(p)
    onehot[np.arange(len(y)), y] = 1.0
    return p - onehot, p * (1.0 - p)


def logistic_loss(margin: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, margin) - y * margin


def softmax_loss(margins: np.ndarray, y: np.ndarray) -> np.ndarray:
    m = margins.max(axis=1)
    lse = m + np.log(np.exp(margins - m[:, None]).sum(axis=1))
    return lse - margins[np.arange(len(y)), y]


# ---------------------------------------------------------------------------
# trees


@dataclass
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # leaf output, already scaled by eta
    gain: np.ndarray
    cover: np.ndarray  # hessian sum of rows reaching the node

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def splits(self):
        """Yields (feature, gain) for every internal node in node order."""
        for f, gn in zip(self.feature.tolist(), self.gain.tolist()):
            if f >= 0:
                yield f, gn

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[active]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return self.value[node]

    def to_dict(self, i: int = 0) -> dict:
        if self.feature[i] < 0:
            return {"leaf": float(self.value[i]), "cover": float(self.cover[i])}
        return {
            "feature": int(self.feature[i]),
            "threshold": float(self.threshold[i]),
            "gain": float(self.gain[i]),
            "cover": float(self.cover[i]),
            "left": self.to_dict(int(self.left[i])),
            "right": self.to_dict(int(self.right[i])),
        }

    @classmethod
    def from_dict(cls, root: dict) -> Tree:
        b = _TreeBuilder()

        def walk(node) -> int:
            if "leaf" in node:
                return b.add_leaf(node["leaf"], node["cover"])
            i = b.add_split(node["feature"], node["threshold"], node["gain"], node["cover"])
            b.left[i] = walk(node["left"])
            b.right[i] = walk(node["right"])
            return i

        walk(root)
        return b.build()


class _TreeBuilder:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right = [], [], [], []
        self.value, self.gain, self.cover = [], [], []

    def _add(self, f, t, v, gn, c) -> int:
        self.feature.append(f)
        self.threshold.append(t)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(v)
        self.gain.append(gn)
        self.cover.append(c)
        return len(self.feature) - 1

    def add_leaf(self, value, cover) -> int:
        return self._add(-1, 0.0, float(value), 0.0, float(cover))

    def add_split(self, feature, threshold, gain, cover) -> int:
        return self._add(int(feature), float(threshold), 0.0, float(gain), float(cover))

    def build(self) -> Tree:
        return Tree(
            feature=np.array(self.feature, dtype=np.int64),
            threshold=np.array(self.threshold, dtype=float),
            left=np.array(self.left, dtype=np.int64),
            right=np.array(self.right, dtype=np.int64),
            value=np.array(self.value, dtype=float),
            gain=np.array(self.gain, dtype=float),
            cover=np.array(self.cover, dtype=float),
        )


@dataclass
class _Split:
    feature: int
    threshold: float
    gain: float
    n_left: int


def best_split(ranks, gh, params: GbtParams) -> _Split | None:
    """Best split for one node from per-feature sorted rows.

    ``ranks`` and ``gh`` are (d, m): row j holds the dense ranks of feature
    j's values in ascending order, and the matching gradient/hessian pairs
    packed as ``g + 1j*h``. Equal gains resolve to the lowest feature index,
    then the lowest threshold. The returned threshold is a position; the
    caller maps it back to a value.
    """
    m = ranks.shape[1]
    if m < 2:
        return None
    cs = np.cumsum(gh, axis=1)
    G = cs[0, -1].real
    H = cs[0, -1].imag
    gl = cs.real[:, :-1]
    hl = cs.imag[:, :-1]
    gr = G - gl
    hr = H - hl
    mcw = params.min_child_weight
    valid = (ranks[:, :-1] != ranks[:, 1:]) & (hl >= mcw) & (hr >= mcw)
    if not valid.any():
        return None
    lam = params.reg_lambda
    if mcw > 0 or lam > 0:
        # every valid child has a positive denominator
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = gl * gl / (hl + lam) + gr * gr / (hr + lam)
        gain = 0.5 * (gain - _score(G, H, lam)) - params.gamma
    else:
        gain = 0.5 * (_score(gl, hl, lam) + _score(gr, hr, lam) - _score(G, H, lam)) - params.gamma
    gain = np.where(valid & (gain > 0), gain, -np.inf)
    flat = gain.ravel()  # feature-major
    top = flat.max()
    if not np.isfinite(top):
        return None
    pick = int(np.flatnonzero(flat >= top - GAIN_TIE_RTOL * max(1.0, abs(top)))[0])
    f, pos = divmod(pick, m - 1)
    return _Split(f, float(pos), float(flat[pick]), pos + 1)


def _dense_ranks(XT: np.ndarray, order: np.ndarray) -> np.ndarray:
    xs = np.take_along_axis(XT, order, axis=1)
    steps = np.zeros(xs.shape, dtype=np.int64)
    steps[:, 1:] = xs[:, 1:] != xs[:, :-1]
    ranks = np.empty_like(steps)
    np.put_along_axis(ranks, order, np.cumsum(steps, axis=1), axis=1)
    return ranks


def grow_tree(X, g, h, sorted_rows, params: GbtParams, ranks=None) -> Tree:
    """Grow one tree on the rows listed in ``sorted_rows``.

    ``sorted_rows`` is (d, m): for every feature, the root's row ids
    ordered by that feature. Children inherit the order through a stable
    partition, so sorting happens once per tree.
    """
    b = _TreeBuilder()
    d = X.shape[1]
    XT = np.ascontiguousarray(X.T)
    if ranks is None:
        ranks = _dense_ranks(XT, np.argsort(XT, axis=1, kind="stable"))
    gh = g + 1j * h
    go_left = np.zeros(X.shape[0], dtype=bool)

    # row id in the low 32 bits, the row's rank on that feature above them,
    # so one masked copy partitions both
    def grow(P: np.ndarray, depth: int) -> int:
        S = P & 0xFFFFFFFF
        rows_here = S[0]
        G = float(g[rows_here].sum())
        H = float(h[rows_here].sum())
        split = None
        if depth < params.max_depth and len(rows_here) >= 2:
            split = best_split(P >> 32, gh[S], params)
        if split is None:
            w = leaf_weight(G, H, params.reg_lambda, params.alpha)
            return b.add_leaf(params.eta * w, H)
        f, n_left = split.feature, split.n_left
        threshold = float(XT[f, S[f, n_left - 1]])
        node = b.add_split(f, threshold, split.gain, H)
        n_right = len(rows_here) - n_left
        go_left[S[f, :n_left]] = True
        mask = go_left[S]
        go_left[S[f, :n_left]] = False
        del S
        left = P[mask].reshape(d, n_left)
        right = P[~mask].reshape(d, n_right)
        del P, mask
        b.left[node] = grow(left, depth + 1)
        b.right[node] = grow(right, depth + 1)
        return node

    S0 = np.ascontiguousarray(sorted_rows, dtype=np.int64)
    grow((np.take_along_axis(ranks, S0, axis=1) << 32) | S0, 0)
    return b.build()


# ---------------------------------------------------------------------------
# ensemble


@dataclass
class TreeEnsemble:
    params: GbtParams
    classes: list
    n_features: int
    base_score: float = 0.0
    # rounds[r][k] is round r's tree for class k (one tree per round if binary)
    rounds: list[list[Tree]] = field(default_factory=list)
    feature_names: list[str] | None = None

    @property
    def n_outputs(self) -> int:
        return 1 if self.params.objective is Objective.BINARY_LOGISTIC else len(self.classes)

    def trees(self):
        for r in self.rounds:
            yield from r

    def margins(self, X: np.ndarray, n_rounds: int | None = None) -> np.ndarray:
        X = _check_matrix(X, self.n_features)
        out = np.full((X.shape[0], self.n_outputs), self.base_score)
        for trees in self.rounds[:n_rounds]:
            for k, tree in enumerate(trees):
                out[:, k] += tree.predict(X)
        return out

    def split_gains(self) -> list[tuple[int, float]]:
        return [s for t in self.trees() for s in t.splits()]


@dataclass
class RoundTrace:
    round: int
    train_error: float
    eval_error: float | None = None


def _check_matrix(X, n_features=None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"feature width {X.shape[1]} does not match model width {n_features}")
    return X


def _encode_labels(y, classes=None) -> tuple[np.ndarray, list]:
    y = np.asarray(y)
    if classes is None:
        classes = sorted(set(y.tolist()))
    classes = list(classes)
    index = {c: i for i, c in enumerate(classes)}
    try:
        codes = np.array([index[v] for v in y.tolist()], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]!r} not among classes {classes}") from None
    return codes, classes


def _error_rate(ens: TreeEnsemble, margins: np.ndarray, codes: np.ndarray) -> float:
    if ens.n_outputs == 1:
        pred = (margins[:, 0] > 0).astype(np.int64)
    else:
        pred = margins.argmax(axis=1)
    return float(np.mean(pred != codes))


def train_gbt(
    X,
    y,
    params: GbtParams,
    eval_set: tuple | None = None,
    classes: Sequence | None = None,
    feature_names: Sequence[str] | None = None,
) -> tuple[TreeEnsemble, list[RoundTrace]]:
    """Fit a boosted ensemble; returns it with the per-round error trace.

    ``classes`` fixes the label order; for the binary objective the second
    class is the positive one. With ``params.early_stopping_rounds`` and an
    ``eval_set``, training stops once the eval error has not improved for
    that many rounds and the ensemble is cut back to the best round.
    """
    X = _check_matrix(X)
    if not np.isfinite(X).all():
        raise ValueError("feature matrix contains non-finite values")
    codes, classes = _encode_labels(y, classes)
    if len(set(codes.tolist())) < 2:
        raise ValueError("training labels contain a single class")
    binary = params.objective is Objective.BINARY_LOGISTIC
    if binary and len(classes) != 2:
        raise ValueError("binary objective needs exactly two classes")
    n, d = X.shape
    ens = TreeEnsemble(params, classes, d, feature_names=list(feature_names) if feature_names else None)
    K = ens.n_outputs

    if eval_set is not None:
        Xe = _check_matrix(eval_set[0], d)
        ye, _ = _encode_labels(eval_set[1], classes)
        eval_margin = np.zeros((Xe.shape[0], K))

    rng = np.random.default_rng(params.seed)
    presorted = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    ranks = _dense_ranks(np.ascontiguousarray(X.T), presorted)
    margin = np.zeros((n, K))
    trace: list[RoundTrace] = []
    best_err, best_round = math.inf, 0

    for r in range(params.nrounds):
        if binary:
            gk, hk = logistic_grad_hess(margin[:, 0], codes.astype(float))
            grads, hess = gk[:, None], hk[:, None]
        else:
            grads, hess = softmax_grad_hess(margin, codes)
        if params.subsample < 1.0:
            n_sub = max(1, int(round(params.subsample * n)))
            chosen = np.zeros(n, dtype=bool)
            chosen[rng.choice(n, size=n_sub, replace=False)] = True
            S = presorted[chosen[presorted]].reshape(d, n_sub)
        else:
            S = presorted
        trees = []
        for k in range(K):
            tree = grow_tree(X, grads[:, k], hess[:, k], S, params, ranks)
            trees.append(tree)
        for k, tree in enumerate(trees):
            margin[:, k] += tree.predict(X)
        ens.rounds.append(trees)

        rt = RoundTrace(r + 1, _error_rate(ens, margin, codes))
        if eval_set is not None:
            for k, tree in enumerate(trees):
                eval_margin[:, k] += tree.predict(Xe)
            rt.eval_error = _error_rate(ens, eval_margin, ye)
            if rt.eval_error < best_err:
                best_err, best_round = rt.eval_error, r + 1
        trace.append(rt)
        if (
            eval_set is not None
            and params.early_stopping_rounds is not None
            and r + 1 - best_round >= params.early_stopping_rounds
        ):
            ens.rounds = ens.rounds[:best_round]
            break
    return ens, trace


def predict_gbt(ens: TreeEnsemble, X) -> np.ndarray:
    """Class probabilities, one column per entry of ``ens.classes``."""
    m = ens.margins(X)
    if ens.n_outputs == 1:
        p = sigmoid(m[:, 0])
        return np.column_stack((1.0 - p, p))
    return softmax(m)


def feature_importance(ens: TreeEnsemble) -> list[tuple[int, float]]:
    """Total split gain per feature, descending; ties by feature index.

    Features never used for a split appear with gain 0.
    """
    per: dict[int, list[float]] = {f: [] for f in range(ens.n_features)}
    for f, gn in ens.split_gains():
        per[f].append(gn)
    totals = [(f, math.fsum(v)) for f, v in per.items()]
    return sorted(totals, key=lambda t: (-t[1], t[0]))
