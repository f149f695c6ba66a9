"""Functional-map estimation, structural energies and descriptor-weight training.

Conventions: ``C12`` is ``k2 x k1`` and sends spectral coefficients of
functions on shape 1 to coefficients on shape 2, so ``C12 @ A ~= B`` where
``A`` (``k1 x d``) and ``B`` (``k2 x d``) hold descriptor coefficients.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .descriptors import CombinationWeights, RankWarning
from .spectral import project

logger = logging.getLogger(__name__)

LOSS_WEIGHTS = (1.0, 1.0, 0.001)
TIKHONOV = 1e-9
MODES = ("plain_lsq", "commutativity_weighted")


class FmapError(ValueError):
    pass


class TrainingDivergedError(FloatingPointError):
    def __init__(self, iteration, trace):
        self.iteration = iteration
        self.trace = list(trace)
        super().__init__(f"loss became non-finite at iteration {iteration}")


@dataclass(frozen=True, eq=False)
class FunctionalMap:
    C: np.ndarray

    def __post_init__(self):
        C = np.asarray(self.C, dtype=np.float64)
        if C.ndim != 2:
            raise FmapError(f"functional map must be 2-D, got shape {C.shape}")
        if not np.all(np.isfinite(C)):
            raise FmapError("functional map has non-finite entries")
        object.__setattr__(self, "C", C)

    @property
    def k1(self):
        return self.C.shape[1]

    @property
    def k2(self):
        return self.C.shape[0]


@dataclass(frozen=True)
class FmapSolveOptions:
    alpha: float = 0.0
    mode: str = "plain_lsq"

    def __post_init__(self):
        if self.mode not in MODES:
            raise FmapError(f"unknown solve mode {self.mode!r}; expected one of {MODES}")
        if not self.alpha >= 0:
            raise FmapError("alpha must be nonnegative")


@dataclass(frozen=True)
class LossReport:
    e1: float
    e2: float
    e3: float
    total: float

    CSV_HEADER = "e1,e2,e3,total"

    def csv_row(self):
        return ",".join(repr(float(x)) for x in (self.e1, self.e2, self.e3, self.total))


def _as_matrix(C):
    return C.C if isinstance(C, FunctionalMap) else np.asarray(C, dtype=np.float64)


# ---------------------------------------------------------------------------
# least-squares solve with closed-form derivatives


@dataclass
class _SolveCache:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    G: np.ndarray  # A A^T + eps I
    c: float  # eps = c * trace(A A^T)


def _check_coefficients(A, B):
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2:
        raise FmapError("coefficient matrices must be 2-D")
    if A.shape[1] != B.shape[1]:
        raise FmapError(f"A has {A.shape[1]} descriptors but B has {B.shape[1]}")
    if A.shape[1] == 0:
        raise FmapError("no descriptors (d = 0)")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise FmapError("non-finite descriptor coefficients")
    return A, B


def lstsq_map(A, B):
    """``argmin_C ||C A - B||^2`` with Tikhonov ``eps = 1e-9 trace(A A^T) / k1``.

    Returns ``(C, cache)``; pass ``cache`` to :func:`lstsq_map_backward`.
    """
    k1 = A.shape[0]
    G = A @ A.T
    if not np.all(np.isfinite(G)):
        raise FloatingPointError("normal matrix A A^T is not finite")
    tr = np.trace(G)
    c = TIKHONOV / k1 if tr > 0 else 0.0
    eps = c * tr if tr > 0 else 1.0
    G = G + eps * np.eye(k1)
    Ct = scipy.linalg.solve(G, A @ B.T, assume_a="pos")
    C = Ct.T
    return C, _SolveCache(A=A, B=B, C=C, G=G, c=c)


def lstsq_map_backward(cache, grad_C):
    """Gradients of a scalar loss w.r.t. ``A`` and ``B`` given ``dL/dC``."""
    A, B, C, G, c = cache.A, cache.B, cache.C, cache.G, cache.c
    # Z = G^{-1} grad_C^T  (k1 x k2)
    Z = scipy.linalg.solve(G, grad_C.T, assume_a="pos")
    grad_B = Z.T @ A
    H = C.T @ Z.T  # C^T grad_C G^{-1}
    grad_A = Z @ B - (H + H.T) @ A - 2.0 * c * np.trace(H) * A
    return grad_A, grad_B


def solve_fmap(A, B, opts=None, evals1=None, evals2=None):
    """Estimate the functional map from descriptor coefficients.

    Parameters
    ----------
    A : (k1, d) source coefficients
    B : (k2, d) target coefficients
    opts : FmapSolveOptions
        ``plain_lsq`` solves ``min ||CA - B||^2``. ``commutativity_weighted``
        adds ``alpha * sum_ij (evals2[i] - evals1[j])^2 C_ij^2`` and needs
        both eigenvalue vectors.
    """
    opts = opts or FmapSolveOptions()
    A, B = _check_coefficients(A, B)
    k1, d = A.shape
    if d < k1:
        warnings.warn(f"{d} descriptors for k1={k1}: the map is underdetermined", RankWarning, stacklevel=2)
    if opts.mode == "plain_lsq" or opts.alpha == 0:
        return FunctionalMap(lstsq_map(A, B)[0])
    if evals1 is None or evals2 is None:
        raise FmapError("commutativity_weighted mode needs both eigenvalue vectors")
    ev1 = np.asarray(evals1, dtype=np.float64)[:k1]
    ev2 = np.asarray(evals2, dtype=np.float64)[: B.shape[0]]
    if len(ev1) != k1 or len(ev2) != B.shape[0]:
        raise FmapError("eigenvalue vectors are shorter than the coefficient matrices")
    G = A @ A.T
    tr = np.trace(G)
    eps = TIKHONOV * tr / k1 if tr > 0 else 1.0
    AB = B @ A.T  # (k2, k1)
    C = np.empty((B.shape[0], k1))
    for i in range(B.shape[0]):
        penalty = opts.alpha * np.square(ev2[i] - ev1) + eps
        C[i] = scipy.linalg.solve(G + np.diag(penalty), AB[i], assume_a="pos")
    return FunctionalMap(C)


# ---------------------------------------------------------------------------
# structural energies


def energy_bijectivity(C12, C21):
    C12, C21 = _as_matrix(C12), _as_matrix(C21)
    if C12.shape != C21.T.shape:
        raise FmapError(f"cannot compose maps of shapes {C12.shape} and {C21.shape}")
    r1 = C12 @ C21 - np.eye(C12.shape[0])
    r2 = C21 @ C12 - np.eye(C21.shape[0])
    return float(np.sum(r1**2) + np.sum(r2**2))


def energy_orthogonality(C12, C21):
    C12, C21 = _as_matrix(C12), _as_matrix(C21)
    r1 = C12.T @ C12 - np.eye(C12.shape[1])
    r2 = C21.T @ C21 - np.eye(C21.shape[1])
    return float(np.sum(r1**2) + np.sum(r2**2))


def _commutator_weights(evals_row, evals_col):
    return np.square(np.asarray(evals_row)[:, None] - np.asarray(evals_col)[None, :])


def energy_lap_commutativity(C12, C21, evals1, evals2):
    """``||C12 L1 - L2 C12||^2 + ||C21 L2 - L1 C21||^2`` for diagonal ``L``."""
    C12, C21 = _as_matrix(C12), _as_matrix(C21)
    k2, k1 = C12.shape
    ev1 = np.asarray(evals1, dtype=np.float64)[:k1]
    ev2 = np.asarray(evals2, dtype=np.float64)[:k2]
    if len(ev1) != k1 or len(ev2) != k2 or C21.shape != (k1, k2):
        raise FmapError("eigenvalue or map dimensions do not match")
    w12 = _commutator_weights(ev2, ev1)
    w21 = _commutator_weights(ev1, ev2)
    return float(np.sum(w12 * C12**2) + np.sum(w21 * C21**2))


def total_loss(C12, C21, evals1, evals2, weights=LOSS_WEIGHTS):
    """Weighted sum ``w1 E1 + w2 E2 + w3 E3`` (default weights 1, 1, 0.001)."""
    e1 = energy_bijectivity(C12, C21)
    e2 = energy_orthogonality(C12, C21)
    e3 = energy_lap_commutativity(C12, C21, evals1, evals2)
    w1, w2, w3 = weights
    return LossReport(e1, e2, e3, w1 * e1 + w2 * e2 + w3 * e3)


def total_loss_grad(C12, C21, evals1, evals2, weights=LOSS_WEIGHTS):
    """Return ``(LossReport, dL/dC12, dL/dC21)``."""
    C12, C21 = _as_matrix(C12), _as_matrix(C21)
    report = total_loss(C12, C21, evals1, evals2, weights)
    w1, w2, w3 = weights
    k2, k1 = C12.shape
    r1 = C12 @ C21 - np.eye(k2)
    r2 = C21 @ C12 - np.eye(k1)
    g12 = w1 * 2.0 * (r1 @ C21.T + C21.T @ r2)
    g21 = w1 * 2.0 * (C12.T @ r1 + r2 @ C12.T)
    g12 += w2 * 4.0 * C12 @ (C12.T @ C12 - np.eye(k1))
    g21 += w2 * 4.0 * C21 @ (C21.T @ C21 - np.eye(k2))
    ev1 = np.asarray(evals1, dtype=np.float64)[:k1]
    ev2 = np.asarray(evals2, dtype=np.float64)[:k2]
    g12 += w3 * 2.0 * _commutator_weights(ev2, ev1) * C12
    g21 += w3 * 2.0 * _commutator_weights(ev1, ev2) * C21
    return report, g12, g21


# ---------------------------------------------------------------------------
# training


@dataclass(eq=False)
class ShapePair:
    """Precomputed spectral coefficients of the base descriptors of two shapes.

    ``coeffs1 = Phi1^T M1 F1`` (``k1 x d_in``); combined descriptors
    ``F W`` project to ``coeffs @ W`` so training never revisits vertices.
    """

    coeffs1: np.ndarray
    coeffs2: np.ndarray
    evals1: np.ndarray
    evals2: np.ndarray
    name: str = ""

    @classmethod
    def from_bases(cls, basis1, basis2, desc1, desc2, k=None, name=""):
        if k is not None:
            basis1, basis2 = basis1.truncated(k), basis2.truncated(k)
        v1 = getattr(desc1, "values", desc1)
        v2 = getattr(desc2, "values", desc2)
        if np.shape(v1)[1] != np.shape(v2)[1]:
            raise FmapError("both shapes of a pair need the same descriptor count")
        return cls(project(basis1, v1), project(basis2, v2), basis1.evals, basis2.evals, name)

    @property
    def d_in(self):
        return self.coeffs1.shape[1]


def pair_loss_grad(pair, W, weights=LOSS_WEIGHTS):
    """Loss of one pair under combination matrix ``W`` and its gradient in ``W``."""
    A = pair.coeffs1 @ W
    B = pair.coeffs2 @ W
    C12, cache12 = lstsq_map(A, B)
    C21, cache21 = lstsq_map(B, A)
    report, g12, g21 = total_loss_grad(C12, C21, pair.evals1, pair.evals2, weights)
    gA, gB = lstsq_map_backward(cache12, g12)
    gB2, gA2 = lstsq_map_backward(cache21, g21)
    grad_W = pair.coeffs1.T @ (gA + gA2) + pair.coeffs2.T @ (gB + gB2)
    return report, grad_W


def pair_loss(pair, W, weights=LOSS_WEIGHTS):
    A = pair.coeffs1 @ W
    B = pair.coeffs2 @ W
    C12 = lstsq_map(A, B)[0]
    C21 = lstsq_map(B, A)[0]
    return total_loss(C12, C21, pair.evals1, pair.evals2, weights)


@dataclass
class TrainResult:
    weights: CombinationWeights
    trace: list = field(default_factory=list)  # summed batch loss before each update
    initial_loss: float = float("nan")  # summed over all pairs
    final_loss: float = float("nan")
    seed: int = 0


class Adam:
    """Plain Adam on a single array parameter."""

    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, param, grad):
        if self.m is None:
            self.m = np.zeros_like(param)
            self.v = np.zeros_like(param)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return param - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def initial_weights(d_in, d_out, seed):
    if d_out == d_in:
        return CombinationWeights.identity(d_in)
    return CombinationWeights.random(d_in, d_out, seed=seed)


def run_adam(objective, pairs, W0, lr, steps, batch_size, seed):
    """Shared minibatch Adam loop; ``objective(pair, W) -> (loss, grad)``."""
    rng = np.random.default_rng(seed)
    opt = Adam(lr=lr)
    W = W0.copy()
    trace = []
    n = len(pairs)
    for it in range(steps):
        if n <= batch_size:
            batch = range(n)
        else:
            batch = np.sort(rng.choice(n, size=batch_size, replace=False))
        loss = 0.0
        grad = np.zeros_like(W)
        try:
            for i in batch:
                val, g = objective(pairs[i], W)
                loss += val
                grad += g
        except FloatingPointError as exc:
            raise TrainingDivergedError(it, trace) from exc
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise TrainingDivergedError(it, trace)
        trace.append(float(loss))
        W = opt.step(W, grad)
    return W, trace


def checked_loss(full_loss, W, iteration, trace):
    try:
        value = full_loss(W)
    except FloatingPointError as exc:
        raise TrainingDivergedError(iteration, trace) from exc
    if not np.isfinite(value):
        raise TrainingDivergedError(iteration, trace)
    return value


def train_weights(pairs, d_out=None, lr=1e-4, steps=100, batch_size=8, seed=0,
                  init=None, loss_weights=LOSS_WEIGHTS):
    """Learn one descriptor combination for all shapes by minimizing the structural loss.

    Each step solves ``C12`` and ``C21`` in closed form from the combined
    descriptors of every pair in the batch and backpropagates
    ``E1 + E2 + 0.001 E3`` analytically into the weights.
    """
    if not pairs:
        raise FmapError("no training pairs")
    d_in = pairs[0].d_in
    if any(p.d_in != d_in for p in pairs):
        raise FmapError("all pairs must share the same base descriptor count")
    d_out = d_in if d_out is None else d_out
    W0 = (init if init is not None else initial_weights(d_in, d_out, seed)).matrix
    if W0.shape != (d_in, d_out):
        raise FmapError(f"initial weights have shape {W0.shape}, expected {(d_in, d_out)}")

    def objective(pair, W):
        report, g = pair_loss_grad(pair, W, loss_weights)
        return report.total, g

    def full(W):
        return float(sum(pair_loss(p, W, loss_weights).total for p in pairs))

    initial = checked_loss(full, W0, 0, [])
    W, trace = run_adam(objective, pairs, W0, lr, steps, batch_size, seed)
    final = checked_loss(full, W, steps, trace)
    logger.info("train_weights: loss %.6g -> %.6g over %d steps", initial, final, steps)
    return TrainResult(CombinationWeights(W), trace, initial, final, seed)
