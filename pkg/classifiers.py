"""
Classifier Module

Binary classifiers behind one interface and Platt calibration of their
margins:

- ``logistic``: L2-regularized logistic regression fitted by Newton / IRLS.
- ``rbf_svm``: soft-margin SVM with an RBF kernel trained by simplified SMO.

Labels are +1 / -1 throughout. Margins are positive for the +1 class.
"""

from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from errors import ConfigError, DegenerateClassError
from logger import create_jpa_logger

logger = create_jpa_logger('classifiers')


class Standardizer(NamedTuple):
    """Per-dimension feature standardisation."""
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> 'Standardizer':
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        return cls(mean=mean, std=std)

    def transform(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.std


class ClassifierParams(NamedTuple):
    """Fitted classifier; unused fields stay empty for the other kind."""
    kind: str
    weights: np.ndarray
    bias: float
    support_vectors: np.ndarray
    dual_coef: np.ndarray
    gamma: float


def _check_labels(labels: np.ndarray, what: str) -> None:
    positives = int(np.sum(labels > 0))
    negatives = int(np.sum(labels < 0))
    if positives == 0 or negatives == 0:
        raise DegenerateClassError(
            f"{what} needs both classes, got {positives} positive and {negatives} negative samples")


def fit_logistic(features: np.ndarray, labels: np.ndarray, l2: float = 1.0,
                 max_iter: int = 50, tol: float = 1e-8) -> ClassifierParams:
    """
    L2-regularized logistic regression by Newton's method.

    The bias is not regularized.
    """
    _check_labels(labels, "Logistic regression")
    n, dim = features.shape
    design = np.hstack([features, np.ones((n, 1))])
    targets = (labels > 0).astype(float)
    penalty = np.full(dim + 1, float(l2))
    penalty[-1] = 0.0

    w = np.zeros(dim + 1)
    for iteration in range(max_iter):
        p = expit(design @ w)
        gradient = design.T @ (p - targets) + penalty * w
        curvature = p * (1.0 - p)
        hessian = (design * curvature[:, None]).T @ design + np.diag(penalty) + 1e-9 * np.eye(dim + 1)
        step = np.linalg.solve(hessian, gradient)
        w -= step
        if np.max(np.abs(step)) < tol:
            break
    logger.debug(f"Logistic regression converged after {iteration + 1} Newton steps")
    return ClassifierParams(kind='logistic', weights=w[:-1], bias=float(w[-1]),
                            support_vectors=np.zeros((0, dim)), dual_coef=np.zeros(0), gamma=0.0)


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    sq = (a ** 2).sum(axis=1)[:, None] + (b ** 2).sum(axis=1)[None, :] - 2.0 * a @ b.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


def fit_rbf_svm(features: np.ndarray, labels: np.ndarray, c: float = 1.0,
                gamma: Optional[float] = None, rng: Optional[np.random.Generator] = None,
                tol: float = 1e-3, max_passes: int = 5, max_sweeps: int = 200) -> ClassifierParams:
    """
    Soft-margin RBF SVM trained with simplified SMO.

    The second multiplier of every pair is drawn from ``rng``, so a seeded
    generator makes training reproducible.
    """
    _check_labels(labels, "SVM training")
    rng = rng if rng is not None else np.random.default_rng(0)
    n, dim = features.shape
    gamma = float(gamma) if gamma is not None else 1.0 / dim
    y = np.where(labels > 0, 1.0, -1.0)
    kernel = rbf_kernel(features, features, gamma)

    alpha = np.zeros(n)
    b = 0.0
    decision = np.zeros(n)
    passes = 0
    sweeps = 0
    while passes < max_passes and sweeps < max_sweeps:
        changed = 0
        for i in range(n):
            error_i = decision[i] - y[i]
            if not ((y[i] * error_i < -tol and alpha[i] < c) or (y[i] * error_i > tol and alpha[i] > 0)):
                continue
            j = int(rng.integers(n - 1))
            j += j >= i
            error_j = decision[j] - y[j]
            ai_old, aj_old = alpha[i], alpha[j]
            if y[i] != y[j]:
                low, high = max(0.0, aj_old - ai_old), min(c, c + aj_old - ai_old)
            else:
                low, high = max(0.0, ai_old + aj_old - c), min(c, ai_old + aj_old)
            if low == high:
                continue
            eta = 2.0 * kernel[i, j] - kernel[i, i] - kernel[j, j]
            if eta >= 0:
                continue
            aj = float(np.clip(aj_old - y[j] * (error_i - error_j) / eta, low, high))
            if abs(aj - aj_old) < 1e-5:
                continue
            ai = ai_old + y[i] * y[j] * (aj_old - aj)
            b1 = b - error_i - y[i] * (ai - ai_old) * kernel[i, i] - y[j] * (aj - aj_old) * kernel[i, j]
            b2 = b - error_j - y[i] * (ai - ai_old) * kernel[i, j] - y[j] * (aj - aj_old) * kernel[j, j]
            if 0.0 < ai < c:
                b_new = b1
            elif 0.0 < aj < c:
                b_new = b2
            else:
                b_new = (b1 + b2) / 2.0
            decision += (y[i] * (ai - ai_old) * kernel[:, i] + y[j] * (aj - aj_old) * kernel[:, j]
                         + (b_new - b))
            alpha[i], alpha[j], b = ai, aj, b_new
            changed += 1
        sweeps += 1
        passes = passes + 1 if changed == 0 else 0

    support = alpha > 1e-8
    logger.debug(f"SMO finished after {sweeps} sweeps with {int(support.sum())} support vectors")
    return ClassifierParams(kind='rbf_svm', weights=np.zeros(0), bias=float(b),
                            support_vectors=features[support], dual_coef=(alpha * y)[support],
                            gamma=gamma)


def fit_classifier(kind: str, features: np.ndarray, labels: np.ndarray, l2: float = 1.0,
                   c: float = 1.0, gamma: Optional[float] = None,
                   rng: Optional[np.random.Generator] = None) -> ClassifierParams:
    """Dispatch on the classifier kind."""
    if kind == 'logistic':
        return fit_logistic(features, labels, l2=l2)
    if kind == 'rbf_svm':
        return fit_rbf_svm(features, labels, c=c, gamma=gamma, rng=rng)
    raise ConfigError(f"Unknown classifier kind: {kind}")


def decision_function(params: ClassifierParams, features: np.ndarray) -> np.ndarray:
    """Classifier margins for standardized features (n, dim)."""
    features = np.atleast_2d(features)
    if params.kind == 'logistic':
        return features @ params.weights + params.bias
    if params.support_vectors.shape[0] == 0:
        return np.full(features.shape[0], params.bias)
    return rbf_kernel(features, params.support_vectors, params.gamma) @ params.dual_coef + params.bias


class PlattParams(NamedTuple):
    """Sigmoid p(m) = 1 / (1 + exp(A m + B))."""
    a: float
    b: float

    @property
    def direction(self) -> int:
        """+1 when probability rises with the margin, -1 when it falls, 0 if flat."""
        return int(np.sign(-self.a))


def platt_targets(labels: np.ndarray) -> np.ndarray:
    """Regularized targets (N+ + 1)/(N+ + 2) and 1/(N- + 2)."""
    positives = float(np.sum(labels > 0))
    negatives = float(np.sum(labels <= 0))
    high = (positives + 1.0) / (positives + 2.0)
    low = 1.0 / (negatives + 2.0)
    return np.where(labels > 0, high, low)


def platt_nll(a: float, b: float, margins: np.ndarray, targets: np.ndarray) -> float:
    """Negative log-likelihood of the targets under the sigmoid."""
    f = a * margins + b
    return float(np.sum(np.logaddexp(0.0, f) - (1.0 - targets) * f))


def platt_gradient(a: float, b: float, margins: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Gradient of :func:`platt_nll` with respect to (A, B)."""
    p = expit(-(a * margins + b))
    residual = targets - p
    return np.array([np.sum(residual * margins), np.sum(residual)])


def platt_hessian(a: float, b: float, margins: np.ndarray) -> np.ndarray:
    p = expit(-(a * margins + b))
    w = p * (1.0 - p)
    return np.array([[np.sum(w * margins * margins), np.sum(w * margins)],
                     [np.sum(w * margins), np.sum(w)]])


def platt_fit(margins: Sequence[float], labels: Sequence[int], max_iter: int = 100,
              min_step: float = 1e-10, sigma: float = 1e-12, eps: float = 1e-5) -> PlattParams:
    """
    Fit Platt's sigmoid by damped Newton iterations with backtracking.

    If every margin is equal the slope is not identifiable; the fit then
    falls back to A = 0 and the prior log-odds for B.

    Raises:
        DegenerateClassError: only one class present
    """
    margins = np.asarray(margins, dtype=float)
    labels = np.asarray(labels)
    if margins.shape != labels.shape:
        raise ValueError("margins and labels must have the same length")
    _check_labels(np.where(labels > 0, 1, -1), "Platt scaling")

    positives = float(np.sum(labels > 0))
    negatives = float(np.sum(labels <= 0))
    a, b = 0.0, float(np.log((negatives + 1.0) / (positives + 1.0)))
    if np.ptp(margins) == 0.0:
        logger.warning("All margins equal; Platt slope set to 0")
        return PlattParams(a=0.0, b=b)

    targets = platt_targets(labels)
    value = platt_nll(a, b, margins, targets)
    for iteration in range(max_iter):
        gradient = platt_gradient(a, b, margins, targets)
        if np.max(np.abs(gradient)) < eps:
            break
        hessian = platt_hessian(a, b, margins) + sigma * np.eye(2)
        direction = -np.linalg.solve(hessian, gradient)
        slope = float(gradient @ direction)

        step = 1.0
        while step >= min_step:
            new_a, new_b = a + step * direction[0], b + step * direction[1]
            new_value = platt_nll(new_a, new_b, margins, targets)
            if new_value < value + 1e-4 * step * slope:
                a, b, value = new_a, new_b, new_value
                break
            step /= 2.0
        else:
            logger.debug("Platt line search stalled")
            break
    return PlattParams(a=float(a), b=float(b))


def platt_probability(params: PlattParams, margins) -> np.ndarray:
    """Calibrated probabilities for margins."""
    return expit(-(params.a * np.asarray(margins, dtype=float) + params.b))


def stratified_split(labels: np.ndarray, holdout_fraction: float,
                     rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Indices of a stratified train / held-out split.

    Each class contributes at least one sample to both parts.

    Raises:
        DegenerateClassError: a class has fewer than two samples
    """
    train_parts, holdout_parts = [], []
    for cls in (1, -1):
        members = np.flatnonzero(labels == cls)
        if members.size < 2:
            raise DegenerateClassError(f"Class {cls:+d} has {members.size} samples; need at least 2")
        members = rng.permutation(members)
        k = int(round(holdout_fraction * members.size))
        k = min(max(k, 1), members.size - 1)
        holdout_parts.append(members[:k])
        train_parts.append(members[k:])
    return np.sort(np.concatenate(train_parts)), np.sort(np.concatenate(holdout_parts))
