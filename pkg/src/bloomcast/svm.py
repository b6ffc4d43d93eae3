"""Soft-margin RBF SVM solved in the dual by SMO, assembled one-vs-one.

The binary solver minimizes  f(a) = 1/2 a'Qa - sum(a)  with Q_ij =
y_i y_j K(x_i, x_j), subject to the box 0 <= a_i <= C_i and sum(y_i a_i) = 0,
where C_i is c_pos or c_neg depending on the sample's side. Pair selection is
second-order (maximal violating pair for i, best quadratic gain for j), the
convergence test is the KKT gap m(a) - M(a) <= tol, and kernel rows are
cached rather than materializing the Gram matrix.

The multiclass layer trains one binary problem per unordered class pair and
predicts by majority vote; ties go to the larger aggregate winning decision
magnitude, then to the lower class index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .data import Dataset
from .imbalance import class_weights, smote_oversample

REGIMES = ("ordinary", "weighted", "oversampled")
_TAU = 1e-12
OVO_FORMAT = "bloomcast-ovo/1"


class ConvergenceError(RuntimeError):
    """SMO ran out of iterations before reaching the KKT gap tolerance."""

    def __init__(self, message: str, best_objective: float, violations: int):
        super().__init__(message)
        self.best_objective = best_objective
        self.violations = violations


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian RBF kernel exp(-gamma * ||x - x'||^2)."""

    gamma: float

    def __post_init__(self) -> None:
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")


def rbf_kernel(x: np.ndarray, x2: np.ndarray, spec: KernelSpec) -> float:
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x.shape != x2.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {x2.shape}")
    d = x - x2
    return float(np.exp(-spec.gamma * np.dot(d, d)))


def rbf_cross(X: np.ndarray, Q: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """Kernel matrix K[i, j] = K(X[i], Q[j]) without forming pair diffs."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if X.shape[1] != Q.shape[1]:
        raise ValueError(f"feature length mismatch: {X.shape[1]} vs {Q.shape[1]}")
    sq_x = np.einsum("ij,ij->i", X, X)
    sq_q = np.einsum("ij,ij->i", Q, Q)
    d2 = sq_x[:, None] + sq_q[None, :] - 2.0 * (X @ Q.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-spec.gamma * d2)


def rbf_gram(X: np.ndarray, spec: KernelSpec) -> np.ndarray:
    return rbf_cross(X, X, spec)


def gamma_scale(X: np.ndarray) -> float:
    """Default bandwidth 1 / (n_features * var(X)); falls back to 1/n_features."""
    X = np.asarray(X, dtype=float)
    var = float(X.var())
    if var <= 0.0:
        return 1.0 / X.shape[1]
    return 1.0 / (X.shape[1] * var)


@dataclass
class BinaryProblem:
    inputs: np.ndarray
    labels: np.ndarray
    c_pos: float
    c_neg: float


@dataclass
class DualSolution:
    alphas: np.ndarray
    bias: float
    support_indices: np.ndarray


class _RowCache:
    """LRU cache of RBF kernel rows; the Gram matrix is never fully built."""

    def __init__(self, X: np.ndarray, gamma: float, capacity: int):
        self._X = X
        self._gamma = gamma
        self._sq = np.einsum("ij,ij->i", X, X)
        self._capacity = max(2, capacity)
        self._rows: dict[int, np.ndarray] = {}

    def row(self, i: int) -> np.ndarray:
        row = self._rows.pop(i, None)
        if row is None:
            d2 = self._sq[i] + self._sq - 2.0 * (self._X @ self._X[i])
            np.maximum(d2, 0.0, out=d2)
            row = np.exp(-self._gamma * d2)
        self._rows[i] = row
        if len(self._rows) > self._capacity:
            self._rows.pop(next(iter(self._rows)))
        return row


def _validate_problem(problem: BinaryProblem) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(problem.inputs, dtype=float)
    y = np.asarray(problem.labels, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("inputs must be (n, d) with one label per row")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be +1/-1")
    if not (y > 0).any() or not (y < 0).any():
        raise ValueError("both classes must be present")
    if problem.c_pos <= 0 or problem.c_neg <= 0:
        raise ValueError(
            f"degenerate box: c_pos={problem.c_pos}, c_neg={problem.c_neg} must be > 0"
        )
    return X, y


def solve_binary(
    problem: BinaryProblem,
    kernel: KernelSpec,
    tol: float = 1e-3,
    max_passes: int = 100_000,
) -> DualSolution:
    """Solve the dual by SMO; ``max_passes`` caps pair-update iterations.

    On success the KKT gap max_{up}(-y g) - min_{low}(-y g) is <= tol and the
    box/equality constraints hold. Non-convergence raises ConvergenceError
    carrying the best dual objective reached and the KKT violation count.
    """
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    X, y = _validate_problem(problem)
    n = len(y)
    C = np.where(y > 0, problem.c_pos, problem.c_neg)
    cache = _RowCache(X, kernel.gamma, capacity=min(n, max(64, 3_000_000 // max(n, 1))))

    alpha = np.zeros(n)
    grad = np.full(n, -1.0)  # gradient of 1/2 a'Qa - sum(a) at a = 0
    converged = False
    for _ in range(max_passes):
        neg_yg = -(y * grad)
        up = np.where(y > 0, alpha < C, alpha > 0.0)
        low = np.where(y > 0, alpha > 0.0, alpha < C)
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.argmax(np.where(up, neg_yg, -np.inf)))
        m_val = neg_yg[i]
        m_low = float(np.min(np.where(low, neg_yg, np.inf)))
        if m_val - m_low <= tol:
            converged = True
            break
        row_i = cache.row(i)
        candidates = low & (neg_yg < m_val)
        if not candidates.any():
            converged = True
            break
        # second-order gain b^2/a with a = K_ii + K_jj - 2 K_ij (RBF diag = 1)
        b_vec = m_val - neg_yg
        a_vec = np.maximum(2.0 - 2.0 * row_i, _TAU)
        j = int(np.argmax(np.where(candidates, b_vec * b_vec / a_vec, -np.inf)))
        row_j = cache.row(j)

        step = (m_val - neg_yg[j]) / max(2.0 - 2.0 * row_i[j], _TAU)
        cap_i = C[i] - alpha[i] if y[i] > 0 else alpha[i]
        cap_j = alpha[j] if y[j] > 0 else C[j] - alpha[j]
        step = min(step, cap_i, cap_j)
        if step <= 0:
            converged = True  # numerically stuck at the box; gap is within noise
            break
        alpha[i] = min(max(alpha[i] + y[i] * step, 0.0), C[i])
        alpha[j] = min(max(alpha[j] - y[j] * step, 0.0), C[j])
        grad += (y * step) * (row_i - row_j)

    objective = 0.5 * (alpha.sum() - alpha @ grad)
    if not converged:
        neg_yg = -(y * grad)
        up = np.where(y > 0, alpha < C, alpha > 0.0)
        low = np.where(y > 0, alpha > 0.0, alpha < C)
        m_val = float(np.max(np.where(up, neg_yg, -np.inf)))
        m_low = float(np.min(np.where(low, neg_yg, np.inf)))
        violations = int(np.sum((up & (neg_yg > m_low + tol)) | (low & (neg_yg < m_val - tol))))
        raise ConvergenceError(
            f"SMO did not converge in {max_passes} iterations "
            f"(gap {m_val - m_low:.3e}, objective {objective:.6f}, "
            f"{violations} KKT violations)",
            best_objective=objective,
            violations=violations,
        )

    neg_yg = -(y * grad)
    free = (alpha > 0.0) & (alpha < C)
    if free.any():
        bias = float(np.mean(neg_yg[free]))
    else:
        up = np.where(y > 0, alpha < C, alpha > 0.0)
        low = np.where(y > 0, alpha > 0.0, alpha < C)
        lo = float(np.max(np.where(up, neg_yg, -np.inf))) if up.any() else None
        hi = float(np.min(np.where(low, neg_yg, np.inf))) if low.any() else None
        if lo is None:
            bias = hi if hi is not None else 0.0
        elif hi is None:
            bias = lo
        else:
            bias = 0.5 * (lo + hi)
    return DualSolution(
        alphas=alpha, bias=bias, support_indices=np.flatnonzero(alpha > 0.0)
    )


def dual_objective(
    problem: BinaryProblem, kernel: KernelSpec, alphas: np.ndarray
) -> float:
    """Dual objective sum(a) - 1/2 a'Qa, recomputed from scratch."""
    X, y = _validate_problem(problem)
    alphas = np.asarray(alphas, dtype=float)
    q = (y[:, None] * y[None, :]) * rbf_gram(X, kernel)
    return float(alphas.sum() - 0.5 * alphas @ q @ alphas)


def kkt_report(
    problem: BinaryProblem,
    kernel: KernelSpec,
    solution: DualSolution,
    tol: float = 1e-3,
) -> dict:
    """Recheck KKT conditions of a solution from scratch.

    Returns violation count, worst margin violation, and the equality
    residual |sum(y a)|; all three should sit within tol for a solved
    problem.
    """
    X, y = _validate_problem(problem)
    C = np.where(y > 0, problem.c_pos, problem.c_neg)
    a = solution.alphas
    margins = y * (rbf_gram(X, kernel) @ (a * y) + solution.bias)
    at_zero = a <= _TAU
    at_cap = a >= C - _TAU
    free = ~at_zero & ~at_cap
    excess = np.zeros_like(margins)
    excess[at_zero] = np.maximum(0.0, 1.0 - margins[at_zero])
    excess[at_cap] = np.maximum(0.0, margins[at_cap] - 1.0)
    excess[free] = np.abs(margins[free] - 1.0)
    return {
        "violations": int(np.sum(excess > tol)),
        "max_violation": float(excess.max(initial=0.0)),
        "equality_residual": float(abs(np.dot(a, y))),
    }


def decision_value(
    solution: DualSolution,
    training_inputs: np.ndarray,
    training_labels: np.ndarray,
    kernel: KernelSpec,
    x: np.ndarray,
) -> float:
    """f(x) = sum_i a_i y_i K(x_i, x) + b; the sign is the binary prediction."""
    X = np.asarray(training_inputs, dtype=float)
    y = np.asarray(training_labels, dtype=float)
    x = np.asarray(x, dtype=float)
    if X.shape[0] == 0 or not solution.alphas.any():
        return solution.bias
    if x.shape != (X.shape[1],):
        raise ValueError(f"query length {x.shape} != ({X.shape[1]},)")
    k_col = rbf_cross(X, x[None, :], kernel)[:, 0]
    return float((solution.alphas * y) @ k_col + solution.bias)


@dataclass
class PairClassifier:
    """One trained class pair; keeps only support vectors."""

    pos_class: int
    neg_class: int
    support_x: np.ndarray
    support_y: np.ndarray
    support_alpha: np.ndarray
    bias: float

    def decide(self, Q: np.ndarray, kernel: KernelSpec) -> np.ndarray:
        if len(self.support_alpha) == 0:
            return np.full(len(Q), self.bias)
        k_mat = rbf_cross(self.support_x, Q, kernel)
        return (self.support_alpha * self.support_y) @ k_mat + self.bias


@dataclass
class OvoModel:
    classes: list[int]
    kernel: KernelSpec
    feature_len: int
    pairs: list[PairClassifier] = field(default_factory=list)

    @property
    def k_classes(self) -> int:
        return len(self.classes)


def train_ovo(
    dataset: Dataset,
    C: float = 1.0,
    kernel: KernelSpec | None = None,
    regime: str = "ordinary",
    seed: int = 0,
    tol: float = 1e-3,
    max_passes: int = 1_000_000,
    smote_neighbors: int = 5,
) -> OvoModel:
    """Train one binary SVM per unordered class pair.

    Regimes: ``ordinary`` uses a uniform C; ``weighted`` scales each side of
    every pair by the class weights of the full training set (C_j = C * w_j);
    ``oversampled`` first applies SMOTE (seeded) and then a uniform C. When
    ``kernel`` is omitted the bandwidth comes from :func:`gamma_scale` on the
    incoming (pre-oversampling) features, so all regimes share one kernel.
    """
    if regime not in REGIMES:
        raise ValueError(f"regime must be one of {REGIMES}, got {regime!r}")
    if C <= 0:
        raise ValueError(f"C must be > 0, got {C}")
    if len(dataset.class_counts) < 2:
        raise ValueError("need at least 2 classes to train a one-vs-one model")
    if kernel is None:
        kernel = KernelSpec(gamma_scale(dataset.feature_matrix()))

    if regime == "oversampled":
        dataset = smote_oversample(dataset, rng_seed=seed, n_neighbors=smote_neighbors)
    if regime == "weighted":
        weights = class_weights(dataset.class_counts).weights
    else:
        weights = {cls: 1.0 for cls in dataset.class_counts}

    X = dataset.feature_matrix()
    labels = dataset.labels()
    classes = sorted(dataset.class_counts)
    by_class = {cls: np.flatnonzero(labels == cls) for cls in classes}

    pairs: list[PairClassifier] = []
    for pos, neg in combinations(classes, 2):
        idx = np.concatenate([by_class[pos], by_class[neg]])
        pair_x = X[idx]
        pair_y = np.where(labels[idx] == pos, 1.0, -1.0)
        problem = BinaryProblem(
            inputs=pair_x,
            labels=pair_y,
            c_pos=C * weights[pos],
            c_neg=C * weights[neg],
        )
        try:
            solution = solve_binary(problem, kernel, tol=tol, max_passes=max_passes)
        except ConvergenceError as exc:
            raise ConvergenceError(
                f"pair ({pos}, {neg}): {exc}",
                best_objective=exc.best_objective,
                violations=exc.violations,
            ) from exc
        sup = solution.support_indices
        pairs.append(
            PairClassifier(
                pos_class=pos,
                neg_class=neg,
                support_x=pair_x[sup],
                support_y=pair_y[sup],
                support_alpha=solution.alphas[sup],
                bias=solution.bias,
            )
        )
    return OvoModel(
        classes=classes, kernel=kernel, feature_len=dataset.feature_len, pairs=pairs
    )


def _check_query(model: OvoModel, Q: np.ndarray) -> np.ndarray:
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape[1] != model.feature_len:
        raise ValueError(
            f"query feature length {Q.shape[1]} != model feature length {model.feature_len}"
        )
    return Q


def vote_counts(model: OvoModel, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise votes and winning-magnitude sums, per query row and class."""
    Q = _check_query(model, Q)
    col = {cls: i for i, cls in enumerate(model.classes)}
    votes = np.zeros((len(Q), model.k_classes), dtype=int)
    magnitude = np.zeros((len(Q), model.k_classes))
    for pair in model.pairs:
        dec = pair.decide(Q, model.kernel)
        pos_wins = dec >= 0.0
        p, q = col[pair.pos_class], col[pair.neg_class]
        votes[pos_wins, p] += 1
        votes[~pos_wins, q] += 1
        magnitude[pos_wins, p] += dec[pos_wins]
        magnitude[~pos_wins, q] -= dec[~pos_wins]
    return votes, magnitude


def predict_many(model: OvoModel, Q: np.ndarray) -> np.ndarray:
    votes, magnitude = vote_counts(model, Q)
    out = np.empty(len(votes), dtype=int)
    for row in range(len(votes)):
        best = max(
            range(model.k_classes),
            key=lambda c: (votes[row, c], magnitude[row, c], -c),
        )
        out[row] = model.classes[best]
    return out


def predict_ovo(model: OvoModel, x: np.ndarray) -> int:
    return int(predict_many(model, np.asarray(x, dtype=float)[None, :])[0])


def predict_scores(model: OvoModel, x: np.ndarray) -> np.ndarray:
    """Per-class vote fractions; sums to 1 over the k(k-1)/2 contests."""
    votes, _ = vote_counts(model, np.asarray(x, dtype=float)[None, :])
    total = model.k_classes * (model.k_classes - 1) / 2
    return votes[0] / total


def score_matrix(model: OvoModel, Q: np.ndarray) -> np.ndarray:
    votes, _ = vote_counts(model, Q)
    total = model.k_classes * (model.k_classes - 1) / 2
    return votes / total


def save_ovo(model: OvoModel, path: str | Path) -> None:
    payload = {
        "format": OVO_FORMAT,
        "classes": model.classes,
        "gamma": model.kernel.gamma,
        "feature_len": model.feature_len,
        "pairs": [
            {
                "pos": pair.pos_class,
                "neg": pair.neg_class,
                "bias": pair.bias,
                "alpha": pair.support_alpha.tolist(),
                "y": pair.support_y.tolist(),
                "x": pair.support_x.tolist(),
            }
            for pair in model.pairs
        ],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def load_ovo(path: str | Path) -> OvoModel:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != OVO_FORMAT:
        raise ValueError(f"{path}: not a {OVO_FORMAT} model file")
    feature_len = int(payload["feature_len"])
    pairs = [
        PairClassifier(
            pos_class=int(entry["pos"]),
            neg_class=int(entry["neg"]),
            support_x=np.array(entry["x"], dtype=float).reshape(-1, feature_len),
            support_y=np.array(entry["y"], dtype=float),
            support_alpha=np.array(entry["alpha"], dtype=float),
            bias=float(entry["bias"]),
        )
        for entry in payload["pairs"]
    ]
    return OvoModel(
        classes=[int(c) for c in payload["classes"]],
        kernel=KernelSpec(float(payload["gamma"])),
        feature_len=feature_len,
        pairs=pairs,
    )
