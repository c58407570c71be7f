"""
Data models for ground metric learning.
"""

import math
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Tuple

import numpy as np

# Neighbourhood size meaning "every neighbour" (k = infinity).
ALL = math.inf

HISTOGRAM_TOL = 1e-9


class GmlError(Exception):
    """Base class for errors raised by the package."""


class ValidationError(GmlError, ValueError):
    """Invalid input: bad histogram, dimension mismatch, bad configuration."""


class TransportError(GmlError):
    """The transportation solver failed on an instance."""

    def __init__(self, message: str, pair: Optional[Tuple[int, int]] = None):
        super().__init__(message)
        self.pair = pair


class ConvergenceError(GmlError):
    """An iterative method stopped before reaching its tolerance."""

    def __init__(self, message: str, residual: float = math.nan):
        super().__init__(message)
        self.residual = residual


class DescentError(GmlError):
    """Failure inside the descent; the trace up to the failure is kept."""

    def __init__(self, message: str, trace: "DescentTrace"):
        super().__init__(message)
        self.trace = trace


def as_histogram(values, tol: float = HISTOGRAM_TOL, name: str = "histogram") -> np.ndarray:
    """
    Validate and return a histogram as a float array.

    Args:
        values: Sequence of d nonnegative reals summing to 1
        tol: Tolerance on the total mass
        name: Name used in error messages

    Returns:
        1-d float64 array
    """
    r = np.asarray(values, dtype=np.float64)
    if r.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional, got shape {r.shape}")
    if r.shape[0] < 2:
        raise ValidationError(f"{name} needs at least 2 bins, got {r.shape[0]}")
    if not np.all(np.isfinite(r)):
        raise ValidationError(f"{name} has non-finite entries")
    if np.any(r < 0):
        raise ValidationError(f"{name} has negative entries (min {r.min():.3g})")
    if abs(r.sum() - 1.0) > tol:
        raise ValidationError(f"{name} sums to {r.sum():.12g}, expected 1")
    return r


@dataclass(frozen=True)
class TransportBasis:
    """
    Spanning-tree basis of the bipartite flow network, reusable as a warm start.
    """
    cells: Tuple[Tuple[int, int], ...]  # 2d-1 basic cells (row bin, column bin)
    row_marginal: Tuple[float, ...]     # marginals the basis was built for
    col_marginal: Tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.row_marginal)

    def matches(self, r: np.ndarray, c: np.ndarray) -> bool:
        """Whether this basis was built for the marginals (r, c)."""
        return (len(r) == self.dim
                and np.array_equal(np.asarray(self.row_marginal), r)
                and np.array_equal(np.asarray(self.col_marginal), c))


@dataclass
class TransportPlan:
    """
    A coupling in U(r, c).
    """
    entries: np.ndarray       # d x d nonnegative
    row_marginal: np.ndarray
    col_marginal: np.ndarray

    def support_size(self, tol: float = 0.0) -> int:
        return int(np.count_nonzero(self.entries > tol))


@dataclass
class SolveResult:
    """
    Optimal value, extreme-point plan and basis of one transportation LP.
    """
    value: float
    plan: TransportPlan
    basis: TransportBasis
    pivots: int = 0


@dataclass(frozen=True)
class Violation:
    """A violated metric constraint: kind, indices involved, amount."""
    kind: str                    # diagonal | symmetry | nonnegativity | triangle
    indices: Tuple[int, ...]
    magnitude: float


@dataclass
class MetricCheck:
    ok: bool
    violations: List[Violation] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


@dataclass
class TrainingSet:
    """
    n histograms of dimension d with symmetric similarity weights.
    """
    histograms: np.ndarray   # n x d
    weights: np.ndarray      # n x n, symmetric, zero diagonal

    def __post_init__(self):
        self.histograms = np.asarray(self.histograms, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.histograms.ndim != 2:
            raise ValidationError("histograms must be an n x d array")
        n = self.histograms.shape[0]
        if self.weights.shape != (n, n):
            raise ValidationError(
                f"weights must be {n} x {n}, got {self.weights.shape}")
        for i, r in enumerate(self.histograms):
            as_histogram(r, name=f"histogram {i}")
        if not np.allclose(self.weights, self.weights.T, atol=1e-12):
            raise ValidationError("weights must be symmetric")
        if np.any(np.diag(self.weights) != 0):
            raise ValidationError("weights must have a zero diagonal")

    @property
    def n(self) -> int:
        return self.histograms.shape[0]

    @property
    def dim(self) -> int:
        return self.histograms.shape[1]

    def pairs(self, sign: str) -> List[Tuple[int, int]]:
        """Unordered pairs i < j whose weight has the given sign ('+' or '-')."""
        upper = np.triu(self.weights, 1)
        mask = upper > 0 if sign == "+" else upper < 0
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(mask))]


@dataclass
class SubgradEval:
    """
    Objective value and subgradient of S+_k or S-_k at one metric.
    """
    value: float
    subgrad: np.ndarray                      # upper-triangle vector
    plans: Dict[Tuple[int, int], SolveResult] = field(default_factory=dict)
    neighbors: Dict[int, List[int]] = field(default_factory=dict)

    def bases(self) -> Dict[Tuple[int, int], TransportBasis]:
        """Warm-start cache for the next evaluation."""
        return {pair: result.basis for pair, result in self.plans.items()}


@dataclass
class GmlParams:
    """
    Parameters of the projected subgradient descent and its initial point.
    """
    k: float = 3                 # neighbourhood size, ALL for k = infinity
    t0: float = 0.1              # base step size
    p_max: int = 8               # outer iterations
    q_max: int = 200             # inner iterations
    progress_eps: float = 0.0075 # minimal relative progress over a window
    inner_window: int = 6
    outer_window: int = 2
    init: str = "typical"        # uniform | independence | typical
    init_k: float = ALL          # neighbourhood size used by the initial point
    lam: float = 1.0             # regularization of the initial projection
    mix: float = 1.0             # weight of the initial point against M_1
    return_mode: str = "best"    # best | last
    warm_start: bool = True

    def __post_init__(self):
        problems = []
        if not self.t0 > 0:
            problems.append("t0 must be positive")
        if self.p_max < 1 or self.q_max < 1:
            problems.append("p_max and q_max must be at least 1")
        if not 0 < self.progress_eps < 1:
            problems.append("progress_eps must lie in (0, 1)")
        if self.k < 1 or self.init_k < 1:
            problems.append("k must be at least 1")
        if self.init not in ("uniform", "independence", "typical"):
            problems.append(f"unknown init kind {self.init!r}")
        if not self.lam > 0:
            problems.append("lam must be positive")
        if not 0 <= self.mix <= 1:
            problems.append("mix must lie in [0, 1]")
        if self.return_mode not in ("best", "last"):
            problems.append(f"unknown return_mode {self.return_mode!r}")
        if problems:
            raise ValidationError("; ".join(problems))

    def min_inner(self, p: int) -> int:
        """Minimum number of inner steps in outer round p (p counted from 0)."""
        return int(math.ceil(50 * 0.8 ** p - 1e-9))

    def to_dict(self):
        d = asdict(self)
        for key in ("k", "init_k"):
            if math.isinf(d[key]):
                d[key] = "all"
        return d


@dataclass
class StepRecord:
    """One inner iteration of the descent."""
    p: int
    q: int
    t: int
    z_in: float
    z_out: float
    step_norm: float
    residual: float


@dataclass
class OuterRecord:
    """True criterion value at the start of an outer round."""
    p: int
    value: float


@dataclass
class DescentTrace:
    steps: List[StepRecord] = field(default_factory=list)
    outer: List[OuterRecord] = field(default_factory=list)
    best_value: float = math.inf
    best_metric: Optional[np.ndarray] = None
    last_metric: Optional[np.ndarray] = None
    last_value: float = math.nan

    def offer(self, p: int, value: float, metric: np.ndarray):
        """Record the criterion value of an outer point and keep the best one."""
        self.outer.append(OuterRecord(p=p, value=value))
        if value < self.best_value:
            self.best_value = value
            self.best_metric = metric.copy()

    def to_rows(self) -> List[dict]:
        return [asdict(step) for step in self.steps]


@dataclass
class DescentResult:
    metric: np.ndarray
    trace: DescentTrace


@dataclass
class SynthConfig:
    """
    Planted-block synthetic dataset parameters.
    """
    d: int = 16
    blocks: Optional[List[List[int]]] = None  # partition of range(d); default 4 contiguous blocks
    n_classes: int = 2
    within_noise: float = 0.8   # how far within-block templates are shuffled
    cross_signal: float = 1.0   # extra block mass on the class's own blocks
    n_train_per_class: int = 30
    n_test_per_class: int = 40
    seed: int = 0

    def __post_init__(self):
        if self.blocks is None:
            size = max(1, self.d // 4)
            self.blocks = [list(range(s, min(s + size, self.d))) for s in range(0, self.d, size)]
        self.blocks = [[int(b) for b in block] for block in self.blocks]

    def validate(self) -> List[str]:
        problems = []
        if self.d < 2:
            problems.append("d must be at least 2")
        flat = sorted(b for block in self.blocks for b in block)
        if flat != list(range(self.d)):
            problems.append("blocks must partition the bins 0..d-1")
        if any(len(block) == 0 for block in self.blocks):
            problems.append("blocks must be non-empty")
        if self.n_classes < 2:
            problems.append("n_classes must be at least 2")
        if not 0 <= self.within_noise <= 1:
            problems.append("within_noise must lie in [0, 1]")
        if self.cross_signal < 0:
            problems.append("cross_signal must be nonnegative")
        if self.n_train_per_class < 1 or self.n_test_per_class < 1:
            problems.append("class sizes must be positive")
        return problems

    def to_dict(self):
        return asdict(self)


@dataclass
class LabeledDataset:
    """
    Histograms with integer labels and a train/test assignment.
    """
    histograms: np.ndarray   # N x d
    labels: np.ndarray       # N integers
    is_train: np.ndarray     # N booleans

    def __post_init__(self):
        self.histograms = np.asarray(self.histograms, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.is_train = np.asarray(self.is_train, dtype=bool)
        if self.histograms.ndim != 2:
            raise ValidationError("histograms must form an N x d array")
        if not (len(self.labels) == len(self.is_train) == self.histograms.shape[0]):
            raise ValidationError("histograms, labels and split must have equal length")
        for i, r in enumerate(self.histograms):
            as_histogram(r, tol=1e-8, name=f"histogram {i}")
        test_labels = set(self.labels[~self.is_train].tolist())
        missing = test_labels - set(self.labels[self.is_train].tolist())
        if missing:
            raise ValidationError(f"labels {sorted(missing)} appear in test but not in train")

    @property
    def dim(self) -> int:
        return self.histograms.shape[1]

    @property
    def train(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.histograms[self.is_train], self.labels[self.is_train]

    @property
    def test(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.histograms[~self.is_train], self.labels[~self.is_train]


@dataclass
class KnnCurves:
    """Recall and error curves, index 0 holds kappa = 1."""
    recall: np.ndarray
    error: np.ndarray

    @property
    def kappa_max(self) -> int:
        return len(self.recall)
