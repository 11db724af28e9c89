"""Single-split learners: the sparse oblique split optimizer and the CART-style
univariate scan used by the FIGS baseline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

# Below this mass a sigmoid side is treated as empty.
_EMPTY_SIDE = 1e-12


@dataclass(frozen=True)
class ObliqueSplit:
    """A hyperplane test ``sum_j weights[j] * x[features[j]] <= threshold``.

    Samples satisfying the inequality go left, the rest go right. A univariate
    split is the special case of one feature with weight 1.
    """

    features: tuple[int, ...]
    weights: tuple[float, ...]
    threshold: float

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(int(f) for f in self.features))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "threshold", float(self.threshold))
        if len(self.features) != len(self.weights):
            raise ValueError("features and weights must have the same length")
        if not any(w != 0.0 for w in self.weights):
            raise ValueError("an oblique split needs at least one non-zero weight")

    @property
    def beam_size(self) -> int:
        return len(self.features)

    @property
    def active_features(self) -> tuple[int, ...]:
        return tuple(f for f, w in zip(self.features, self.weights) if w != 0.0)

    def project(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return X[:, list(self.features)] @ np.asarray(self.weights, dtype=float)

    def goes_left(self, X: np.ndarray) -> np.ndarray:
        return self.project(X) <= self.threshold


@dataclass(frozen=True)
class SplitSearchConfig:
    """Settings of the gradient-descent split optimizer.

    ``C`` weighs the impurity term against the L1/2 penalty, ``alpha`` is the
    steepness of the sigmoid relaxation of the hard split, ``sqrt_smoothing``
    is the delta inside ``sqrt(|w| + delta)``.
    """

    C: float = 1.0
    gd_iterations: int = 100
    learning_rate: float = 0.05
    alpha: float = 10.0
    sqrt_smoothing: float = 1e-8
    sparsify_epsilon: float = 0.05
    restarts: int = 3
    seed: int = 0

    def __post_init__(self):
        for name in ("C", "learning_rate", "alpha", "sqrt_smoothing"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)!r}")
        for name in ("gd_iterations", "restarts"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.sparsify_epsilon < 0:
            raise ConfigError("sparsify_epsilon must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be unsigned")


@dataclass(frozen=True)
class SplitCandidate:
    """A proposed split together with where it would be placed.

    ``tree`` is None for a new stump; otherwise ``(tree, leaf)`` names the leaf
    (in left-to-right order) that the split would replace.
    """

    split: ObliqueSplit
    impurity_decrease: float
    tree: int | None = None
    leaf: int | None = None
    beam: tuple[int, ...] = field(default=())
    repetitions: int = 1


def half_norm(w) -> float:
    """L1/2 quasi-norm ``(sum_i sqrt(|w_i|))**2``."""
    w = np.asarray(w, dtype=float)
    return float(np.sqrt(np.abs(w)).sum() ** 2)


def node_sse(residuals) -> float:
    r = np.asarray(residuals, dtype=float)
    if r.size == 0:
        raise ValueError("node_sse of an empty node")
    return float(np.sum((r - r.mean()) ** 2))


def _sigmoid(z):
    # numerically safe logistic
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _penalty(w, delta):
    root = np.sqrt(np.abs(w) + delta)
    total = root.sum()
    grad = total * np.sign(w) / root
    return float(total**2), grad


def _soft_impurity(s, r):
    """Weighted variance total of both sides and its derivative w.r.t. ``s``."""
    value = 0.0
    dg_ds = np.zeros_like(r)
    for weights, sign in ((s, 1.0), (1.0 - s, -1.0)):
        mass = weights.sum()
        if mass < _EMPTY_SIDE:
            continue
        mu = (weights * r).sum() / mass
        dev2 = (r - mu) ** 2
        value += float((weights * dev2).sum())
        # d/ds_i of sum_j s_j (r_j - mu(s))^2 is (r_i - mu)^2, mu terms cancel
        dg_ds += sign * dev2
    return value, dg_ds


def smoothed_objective(w, b, X_sub, residuals, cfg: SplitSearchConfig):
    """Differentiable split objective and its exact gradient.

    Returns ``(value, grad_w, grad_b)`` where the value is the smoothed L1/2
    penalty plus ``C`` times the soft two-sided impurity. Sample ``i`` belongs to
    the right side with weight ``sigmoid(alpha * (w @ x_i + b))``.
    """
    w = np.asarray(w, dtype=float)
    X_sub = np.asarray(X_sub, dtype=float)
    r = np.asarray(residuals, dtype=float)

    s = _sigmoid(cfg.alpha * (X_sub @ w + b))
    g, dg_ds = _soft_impurity(s, r)
    dg_dz = dg_ds * cfg.alpha * s * (1.0 - s)

    pen, pen_grad = _penalty(w, cfg.sqrt_smoothing)
    value = pen + cfg.C * g
    grad_w = pen_grad + cfg.C * (X_sub.T @ dg_dz)
    grad_b = float(cfg.C * dg_dz.sum())
    return value, grad_w, grad_b


def _hard_decrease(go_left, r):
    n_left = int(go_left.sum())
    if n_left == 0 or n_left == r.size:
        return 0.0
    return node_sse(r) - node_sse(r[go_left]) - node_sse(r[~go_left])


def impurity_decrease(split: ObliqueSplit, X, residuals, node_rows) -> float:
    """Unnormalized SSE decrease of ``split`` on the node; 0 if a side is empty."""
    rows = np.asarray(node_rows, dtype=int)
    r = np.asarray(residuals, dtype=float)[rows]
    go_left = split.goes_left(np.asarray(X, dtype=float)[rows])
    return _hard_decrease(go_left, r)


def _initial_point(Xn, restart, rng):
    k = Xn.shape[1]
    if restart == 0:
        w = rng.uniform(-0.01, 0.01, size=k)
        anchor = Xn.mean(axis=0)
    else:
        # unit-scale direction through a random node sample
        w = rng.uniform(-1.0, 1.0, size=k)
        anchor = Xn[rng.integers(Xn.shape[0])]
    return w, -float(w @ anchor)


def _descend(w, b, Xn, r, cfg):
    """Adam on ``(w, b)`` with a linearly decaying step.

    Adam keeps the step independent of the node size, which the unnormalized
    impurity term is not. The decay lets weights that the L1/2 penalty holds
    near zero settle there instead of oscillating at step-size amplitude.
    """
    theta = np.append(w, b)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    steps = cfg.gd_iterations
    for t in range(1, steps + 1):
        _, grad_w, grad_b = smoothed_objective(theta[:-1], theta[-1], Xn, r, cfg)
        grad = np.append(grad_w, grad_b)
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad**2
        lr = cfg.learning_rate * (steps - t + 1) / steps
        theta = theta - lr * (m / (1 - beta1**t)) / (np.sqrt(v / (1 - beta2**t)) + eps)
    return theta[:-1], float(theta[-1])


def _sparsify(w, eps):
    top = np.abs(w).max()
    if top == 0.0 or not np.isfinite(top):
        return np.zeros_like(w)
    return np.where(np.abs(w) < eps * top, 0.0, w)


def _scan(x, r):
    """Approximate SSE decrease of every midpoint threshold of ``x``."""
    order = np.argsort(x, kind="stable")
    xs, rs = x[order], r[order]
    cut = np.nonzero(xs[1:] > xs[:-1])[0]
    if cut.size == 0:
        return cut.astype(float), cut.astype(float)
    n = r.size
    total, total_sq = rs.sum(), (rs**2).sum()
    csum = np.cumsum(rs)[cut]
    csq = np.cumsum(rs**2)[cut]
    n_left = cut + 1.0
    sse_left = csq - csum**2 / n_left
    sse_right = (total_sq - csq) - (total - csum) ** 2 / (n - n_left)
    dec = (total_sq - total**2 / n) - sse_left - sse_right
    return (xs[cut] + xs[cut + 1]) / 2.0, dec


def _best_threshold(proj, r, start):
    """Best hard threshold on a projection; ``start`` wins unless beaten."""
    best_t = start
    best_dec = _hard_decrease(proj <= start, r)
    thresholds, dec = _scan(proj, r)
    if dec.size:
        j = int(np.argmax(dec))
        exact = _hard_decrease(proj <= thresholds[j], r)
        if exact > best_dec:
            best_t, best_dec = float(thresholds[j]), exact
    return best_t, best_dec


def learn_oblique_split(X, residuals, node_rows, beam, cfg: SplitSearchConfig, rng=None):
    """Fit a sparse oblique split of the node on the beam features.

    Runs ``cfg.restarts`` gradient-descent minimizations of
    :func:`smoothed_objective` and sparsifies each resulting direction. The
    direction is rescaled so its largest-magnitude weight is +1, and the
    threshold is ``-b`` unless a midpoint of the projected node samples gives a
    strictly larger hard impurity decrease. The restart with the largest hard
    decrease wins. Returns None when the node
    cannot be split (fewer than two rows, all weights pruned, or an empty side).
    """
    rows = np.asarray(node_rows, dtype=int)
    beam = tuple(int(f) for f in beam)
    if rows.size < 2:
        return None
    if not beam:
        raise ValueError("beam must be non-empty")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)

    Xn = np.asarray(X, dtype=float)[np.ix_(rows, beam)]
    r = np.asarray(residuals, dtype=float)[rows]

    best, best_dec = None, -np.inf
    for restart in range(cfg.restarts):
        w0, b0 = _initial_point(Xn, restart, rng)
        w, b = _descend(w0, b0, Xn, r, cfg)
        w = _sparsify(w, cfg.sparsify_epsilon)
        if not np.any(w != 0.0) or not np.isfinite(b):
            continue
        # canonical orientation: the dominant weight becomes +1
        lead = w[np.argmax(np.abs(w))]
        w, b = w / lead, b / lead
        threshold, dec = _best_threshold(Xn @ w, r, -b)
        if not dec > 0:
            continue
        if dec > best_dec:
            best_dec = dec
            best = ObliqueSplit(beam, tuple(float(v) for v in w), threshold)
    return best


def best_univariate_split(X, residuals, node_rows, features=None):
    """Exhaustive CART scan over features and midpoints of distinct values.

    Returns the :class:`SplitCandidate` with the largest SSE decrease (ties go to
    the lowest feature index, then the lowest threshold), or None if every
    feature is constant on the node.
    """
    rows = np.asarray(node_rows, dtype=int)
    if rows.size < 2:
        return None
    X = np.asarray(X, dtype=float)
    r_all = np.asarray(residuals, dtype=float)
    r = r_all[rows]
    if features is None:
        features = range(X.shape[1])

    scanned = []
    for f in features:
        thresholds, dec = _scan(X[rows, f], r)
        if dec.size:
            scanned.append((int(f), thresholds, dec))
    if not scanned:
        return None

    # prefix sums are only approximate; rescore the near-best exactly
    top = max(float(dec.max()) for _, _, dec in scanned)
    slack = 1e-9 * (1.0 + abs(top))
    best_key, best = None, None
    for f, thresholds, dec in scanned:
        for j in np.nonzero(dec >= top - slack)[0]:
            split = ObliqueSplit((f,), (1.0,), float(thresholds[j]))
            exact = impurity_decrease(split, X, r_all, rows)
            key = (-exact, f, split.threshold)
            if best_key is None or key < best_key:
                best_key, best = key, SplitCandidate(split, exact, beam=(f,))
    return best
