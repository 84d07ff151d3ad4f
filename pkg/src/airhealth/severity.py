"""Severity classifiers (levels 1..7) and their evaluation.

KNN is a lazy learner over Euclidean distance with documented
tie-breaks. The SVC is one-vs-one: each unordered class pair gets a
binary machine trained by sequential minimal optimization, and
prediction is by vote. aqi_to_exposure bridges predicted AQI onto the
patient dataset's ordinal air-pollution scale.
"""

from __future__ import annotations

import itertools
import math
from bisect import bisect_left
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .errors import ConvergenceError, DimensionError, DomainError
from .imbalance import MAX_SEVERITY, MIN_SEVERITY, LabeledDataset
from .tensor import derive_rng

# Upper edges of the exposure buckets 1..7; anything above the last
# edge is bucket 8.
_EXPOSURE_EDGES = (50.0, 100.0, 150.0, 200.0, 250.0, 300.0, 400.0)


def linear_kernel(u: np.ndarray, v: np.ndarray) -> float:
    return float(np.dot(u, v))


def rbf_kernel(u: np.ndarray, v: np.ndarray, gamma: float) -> float:
    diff = np.asarray(u, dtype=np.float64) - np.asarray(v, dtype=np.float64)
    return float(np.exp(-gamma * np.dot(diff, diff)))


@dataclass(frozen=True)
class KernelSpec:
    """Kernel selection: linear, or RBF with a positive width."""

    kind: str
    gamma: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("linear", "rbf"):
            raise DomainError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "rbf":
            if self.gamma is None or not math.isfinite(self.gamma) or self.gamma <= 0:
                raise DomainError(f"rbf gamma must be finite and > 0, got {self.gamma!r}")
        elif self.gamma is not None:
            raise DomainError("linear kernel takes no gamma")

    @classmethod
    def linear(cls) -> "KernelSpec":
        return cls(kind="linear")

    @classmethod
    def rbf(cls, gamma: float) -> "KernelSpec":
        return cls(kind="rbf", gamma=gamma)

    def matrix(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Gram matrix K[i, j] = k(a_i, b_j)."""
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if self.kind == "linear":
            return a @ b.T
        sq = (
            np.sum(a * a, axis=1)[:, None]
            + np.sum(b * b, axis=1)[None, :]
            - 2.0 * (a @ b.T)
        )
        np.maximum(sq, 0.0, out=sq)  # guard tiny negatives from cancellation
        return np.exp(-self.gamma * sq)


@dataclass(frozen=True)
class BinarySvm:
    """Trained binary machine: f(x) = sum dual_i k(sv_i, x) + bias.

    dual_coef holds alpha_i * y_i for the support vectors only;
    support_indices point back into the training matrix the machine
    was fitted on.
    """

    support_vectors: np.ndarray
    dual_coef: np.ndarray
    bias: float
    kernel: KernelSpec
    support_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.intp))

    def __post_init__(self) -> None:
        svs = np.asarray(self.support_vectors, dtype=np.float64)
        duals = np.asarray(self.dual_coef, dtype=np.float64).reshape(-1)
        if svs.ndim != 2:
            raise DimensionError(
                "support vectors must form a 2-D matrix", left=svs.shape, right="(s, d)"
            )
        if duals.shape[0] != svs.shape[0]:
            raise DimensionError(
                "dual coefficient count does not match support vectors",
                left=duals.shape,
                right=(svs.shape[0],),
            )
        balance = abs(float(duals.sum()))
        if balance > 1e-6 * max(1.0, float(np.abs(duals).sum())):
            raise DomainError(
                f"dual coefficients must balance: sum alpha_i*y_i = {balance:g}"
            )
        object.__setattr__(self, "support_vectors", svs)
        object.__setattr__(self, "dual_coef", duals)
        object.__setattr__(
            self, "support_indices", np.asarray(self.support_indices, dtype=np.intp)
        )

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.support_vectors.shape[0] == 0:
            return np.full(x.shape[0], self.bias)
        k = self.kernel.matrix(x, self.support_vectors)
        return k @ self.dual_coef + self.bias

    def decision(self, x: np.ndarray) -> float:
        return float(self.decision_function(x)[0])


def kkt_audit(
    svm: BinarySvm, x: np.ndarray, y: np.ndarray, c: float
) -> float:
    """Worst Karush-Kuhn-Tucker violation of a machine on its data.

    Per row, with margin m = y * f(x):
      alpha == 0      -> max(0, 1 - m)
      0 < alpha < C   -> |m - 1|
      alpha == C      -> max(0, m - 1)
    A machine trained to tolerance tol must return <= tol here.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    alphas = np.zeros(x.shape[0])
    if svm.support_indices.size:
        alphas[svm.support_indices] = svm.dual_coef * y[svm.support_indices]
    margins = y * svm.decision_function(x)
    eps = 1e-9 * max(1.0, c)
    worst = 0.0
    for alpha, margin in zip(alphas.tolist(), margins.tolist()):
        if alpha <= eps:
            violation = max(0.0, 1.0 - margin)
        elif alpha >= c - eps:
            violation = max(0.0, margin - 1.0)
        else:
            violation = abs(margin - 1.0)
        worst = max(worst, violation)
    return worst


def smo_train_binary(
    x: np.ndarray,
    y: np.ndarray,
    kernel: KernelSpec,
    c: float,
    tol: float = 1e-3,
    max_passes: int = 10,
    rng: np.random.Generator | None = None,
) -> BinarySvm:
    """Train a soft-margin binary SVM by sequential minimal optimization.

    Simplified working-set selection: sweep all rows; for a row
    violating its KKT condition, pair it with the row maximizing
    |E_i - E_j|, falling back to seeded-random partners when that step
    stalls. Stops after max_passes consecutive full sweeps without an
    update; if violations remain at that point the solver raises,
    carrying the worst violation.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = x.shape[0]
    if y.shape[0] != n:
        raise DimensionError("label count mismatch", left=y.shape, right=(n,))
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise DomainError("labels must be -1 or +1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise DomainError("both classes must be present")
    if c <= 0:
        raise DomainError(f"C must be > 0, got {c}")
    if tol <= 0:
        raise DomainError(f"tol must be > 0, got {tol}")
    if rng is None:
        rng = np.random.default_rng(0)

    gram = kernel.matrix(x, x)
    alphas = np.zeros(n)
    bias = 0.0
    # f_cache[i] = current decision value for row i
    f_cache = np.zeros(n)

    def take_step(i: int, j: int) -> bool:
        nonlocal bias
        if i == j:
            return False
        a_i, a_j = alphas[i], alphas[j]
        e_i, e_j = f_cache[i] - y[i], f_cache[j] - y[j]
        if y[i] != y[j]:
            low, high = max(0.0, a_j - a_i), min(c, c + a_j - a_i)
        else:
            low, high = max(0.0, a_i + a_j - c), min(c, a_i + a_j)
        if low == high:
            return False
        eta = 2.0 * gram[i, j] - gram[i, i] - gram[j, j]
        if eta < 0.0:
            a_j_new = a_j - y[j] * (e_i - e_j) / eta
            a_j_new = min(high, max(low, a_j_new))
        else:
            # Flat or concave-up along the constraint line: the dual is
            # maximized at one of the clip endpoints.
            s = y[i] * y[j]
            v_i = f_cache[i] - bias - a_i * y[i] * gram[i, i] - a_j * y[j] * gram[i, j]
            v_j = f_cache[j] - bias - a_i * y[i] * gram[i, j] - a_j * y[j] * gram[j, j]

            def dual_at(a2: float) -> float:
                a1 = a_i + s * (a_j - a2)
                return (
                    a1 + a2
                    - 0.5 * a1 * a1 * gram[i, i]
                    - 0.5 * a2 * a2 * gram[j, j]
                    - s * a1 * a2 * gram[i, j]
                    - y[i] * a1 * v_i
                    - y[j] * a2 * v_j
                )

            at_low, at_high = dual_at(low), dual_at(high)
            margin = 1e-12 * max(1.0, abs(at_low), abs(at_high))
            if at_low > at_high + margin:
                a_j_new = low
            elif at_high > at_low + margin:
                a_j_new = high
            else:
                return False
        if abs(a_j_new - a_j) < 1e-8:
            return False
        a_i_new = a_i + y[i] * y[j] * (a_j - a_j_new)
        b1 = (
            bias - e_i
            - y[i] * (a_i_new - a_i) * gram[i, i]
            - y[j] * (a_j_new - a_j) * gram[i, j]
        )
        b2 = (
            bias - e_j
            - y[i] * (a_i_new - a_i) * gram[i, j]
            - y[j] * (a_j_new - a_j) * gram[j, j]
        )
        if 0.0 < a_i_new < c:
            b_new = b1
        elif 0.0 < a_j_new < c:
            b_new = b2
        else:
            b_new = (b1 + b2) / 2.0
        f_cache[:] += (
            y[i] * (a_i_new - a_i) * gram[i]
            + y[j] * (a_j_new - a_j) * gram[j]
            + (b_new - bias)
        )
        alphas[i], alphas[j] = a_i_new, a_j_new
        bias = b_new
        return True

    quiet_passes = 0
    total_passes = 0
    hard_cap = max(200, 100 * max_passes)
    while quiet_passes < max_passes and total_passes < hard_cap:
        changed = 0
        for i in range(n):
            e_i = f_cache[i] - y[i]
            r = y[i] * e_i
            if not ((r < -tol and alphas[i] < c) or (r > tol and alphas[i] > 0)):
                continue
            errors = f_cache - y
            gaps = np.abs(e_i - errors)
            gaps[i] = -1.0
            if take_step(i, int(np.argmax(gaps))):
                changed += 1
                continue
            for j in rng.permutation(n):
                if take_step(i, int(j)):
                    changed += 1
                    break
        total_passes += 1
        quiet_passes = quiet_passes + 1 if changed == 0 else 0

    support = np.flatnonzero(alphas > 0.0)
    svm = BinarySvm(
        support_vectors=x[support],
        dual_coef=alphas[support] * y[support],
        bias=bias,
        kernel=kernel,
        support_indices=support,
    )
    worst = kkt_audit(svm, x, y, c)
    if worst > tol:
        raise ConvergenceError(
            f"SMO stopped after {total_passes} passes with a KKT violation of "
            f"{worst:g} (tolerance {tol:g})",
            worst_violation=worst,
        )
    return svm


@dataclass(frozen=True)
class SvcConfig:
    """One-vs-one SVC training settings.

    kernel None means RBF with gamma = 1 / (d * Var(features)),
    computed on the full training matrix at fit time.
    """

    c: float = 1.0
    kernel: KernelSpec | None = None
    tol: float = 1e-3
    max_passes: int = 10
    seed: int = 0


class SvcModel:
    """One binary machine per unordered class pair; majority vote."""

    def __init__(
        self,
        classes: Iterable[int],
        machines: dict[tuple[int, int], BinarySvm],
        config: SvcConfig,
    ):
        self.classes = tuple(sorted(int(cls) for cls in classes))
        if len(self.classes) < 2:
            raise DomainError("one-vs-one needs at least 2 classes")
        expected = {pair for pair in itertools.combinations(self.classes, 2)}
        if set(machines) != expected:
            raise DomainError(
                f"need exactly one machine per class pair: expected "
                f"{len(expected)}, got {len(machines)}"
            )
        self.machines = dict(machines)
        self.config = config
        self.dim = next(iter(machines.values())).support_vectors.shape[1] if machines else 0

    def decision_rows(self, x: np.ndarray) -> dict[tuple[int, int], np.ndarray]:
        return {pair: m.decision_function(x) for pair, m in self.machines.items()}

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        votes = {cls: np.zeros(x.shape[0], dtype=np.int64) for cls in self.classes}
        sums = {cls: np.zeros(x.shape[0]) for cls in self.classes}
        for (a, b), decisions in self.decision_rows(x).items():
            first_wins = decisions >= 0.0
            votes[a] += first_wins
            votes[b] += ~first_wins
            magnitude = np.abs(decisions)
            sums[a] += np.where(first_wins, magnitude, 0.0)
            sums[b] += np.where(first_wins, 0.0, magnitude)
        out = np.empty(x.shape[0], dtype=np.int64)
        for row in range(x.shape[0]):
            # most votes, then largest accumulated winning magnitude,
            # then smallest label
            out[row] = max(
                self.classes,
                key=lambda cls: (votes[cls][row], sums[cls][row], -cls),
            )
        return out

    def predict(self, x: np.ndarray) -> int:
        x = np.asarray(x, dtype=np.float64).reshape(1, -1)
        if x.shape[1] != self.dim:
            raise DimensionError(
                "query dimension does not match training data",
                left=(x.shape[1],),
                right=(self.dim,),
            )
        return int(self.predict_batch(x)[0])


def svc_fit(data: LabeledDataset, config: SvcConfig | None = None) -> SvcModel:
    """Train one binary machine per class pair on that pair's rows.

    Each pair's SMO run draws from an RNG stream derived from
    (seed, pair), so training is reproducible regardless of the order
    the pairs run in.
    """
    if config is None:
        config = SvcConfig()
    classes = sorted(int(v) for v in np.unique(data.labels))
    if len(classes) < 2:
        raise DomainError("SVC training needs at least 2 classes present")
    kernel = config.kernel
    if kernel is None:
        variance = float(data.features.var())
        if variance <= 0.0:
            raise DomainError("features have zero variance; cannot pick an RBF width")
        kernel = KernelSpec.rbf(1.0 / (data.dim * variance))
    machines: dict[tuple[int, int], BinarySvm] = {}
    for a, b in itertools.combinations(classes, 2):
        mask = (data.labels == a) | (data.labels == b)
        rows = data.features[mask]
        y = np.where(data.labels[mask] == a, 1.0, -1.0)
        try:
            machines[(a, b)] = smo_train_binary(
                rows,
                y,
                kernel,
                c=config.c,
                tol=config.tol,
                max_passes=config.max_passes,
                rng=derive_rng(config.seed, "svc", a, b),
            )
        except ConvergenceError as exc:
            raise ConvergenceError(
                f"pair ({a}, {b}): {exc}", worst_violation=exc.worst_violation
            ) from exc
    # the model carries the kernel actually used, never the None default
    resolved = replace(config, kernel=kernel)
    return SvcModel(classes, machines, resolved)


def svc_predict(model: SvcModel, x: np.ndarray) -> int:
    return model.predict(x)


class KnnModel:
    """k-nearest-neighbor classifier over Euclidean distance.

    Stores the training data verbatim. Distance ties resolve to the
    lower row index; vote ties to the smallest label.
    """

    def __init__(self, points: np.ndarray, labels: np.ndarray, k: int):
        points = np.array(points, dtype=np.float64)
        labels = np.array(labels, dtype=np.int64).reshape(-1)
        if points.ndim != 2 or points.shape[0] != labels.shape[0]:
            raise DimensionError(
                "points and labels must align", left=points.shape, right=labels.shape
            )
        if k < 1 or k > points.shape[0]:
            raise DomainError(f"k must lie in 1..{points.shape[0]}, got {k}")
        points.setflags(write=False)
        labels.setflags(write=False)
        self.points = points
        self.labels = labels
        self.k = int(k)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def predict(self, x: np.ndarray) -> int:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.points.shape[1]:
            raise DimensionError(
                "query dimension does not match training data",
                left=x.shape,
                right=(self.points.shape[1],),
            )
        distances = np.linalg.norm(self.points - x, axis=1)
        nearest = np.argsort(distances, kind="stable")[: self.k]
        candidate_labels = self.labels[nearest]
        values, counts = np.unique(candidate_labels, return_counts=True)
        return int(values[counts == counts.max()].min())

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.array([self.predict(row) for row in x], dtype=np.int64)


def knn_fit(data: LabeledDataset, k: int = 5) -> KnnModel:
    return KnnModel(data.features, data.labels, k)


def knn_predict(model: KnnModel, x: np.ndarray) -> int:
    return model.predict(x)


@dataclass(frozen=True)
class EvalReport:
    """Accuracy plus a 7x7 confusion matrix (rows true, columns predicted)."""

    accuracy: float
    confusion: np.ndarray

    def __post_init__(self) -> None:
        size = MAX_SEVERITY - MIN_SEVERITY + 1
        confusion = np.asarray(self.confusion, dtype=np.int64)
        if confusion.shape != (size, size):
            raise DimensionError(
                "confusion matrix has wrong shape",
                left=confusion.shape,
                right=(size, size),
            )
        object.__setattr__(self, "confusion", confusion)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())


def evaluate(model, data: LabeledDataset) -> EvalReport:
    """Score any predictor exposing predict()/predict_batch() on a dataset."""
    if data.n == 0:
        raise DomainError("evaluation needs at least one row")
    if hasattr(model, "predict_batch"):
        predictions = np.asarray(model.predict_batch(data.features), dtype=np.int64)
    else:
        predictions = np.array(
            [int(model.predict(row)) for row in data.features], dtype=np.int64
        )
    size = MAX_SEVERITY - MIN_SEVERITY + 1
    confusion = np.zeros((size, size), dtype=np.int64)
    for true, pred in zip(data.labels.tolist(), predictions.tolist()):
        confusion[true - MIN_SEVERITY, pred - MIN_SEVERITY] += 1
    accuracy = float(np.trace(confusion)) / float(data.n)
    return EvalReport(accuracy=accuracy, confusion=confusion)


def aqi_to_exposure(aqi: float) -> int:
    """Bucket an AQI value onto the patient data's 1..8 pollution scale.

    [0,50] -> 1, then half-open 50-wide steps to 300, (300,400] -> 7,
    above 400 -> 8. Monotone by construction.
    """
    aqi = float(aqi)
    if not math.isfinite(aqi) or aqi < 0.0:
        raise DomainError(f"AQI must be finite and >= 0, got {aqi!r}")
    return bisect_left(_EXPOSURE_EDGES, aqi) + 1
