"""Conditional-independence tests on node quartets.

Decides whether the signal at node c is independent of the signal at node d
given the full voltage components at nodes a and b. Two finite-sample
methods are provided plus one analytic oracle:

* a kernel test: the squared Hilbert-Schmidt norm of the empirical
  normalized conditional cross-covariance operator, built from centered
  Gaussian Gram matrices with the left block augmented by the conditioning
  block and a ridge-regularized conditioning projection;
* a Gaussian partial-correlation test (population-exact or Fisher-z);
* an unconditional Hilbert-Schmidt independence statistic, exposed for
  multi-tree support.

The kernel statistic's decision threshold can run in two modes: a fixed
tolerance on the raw statistic (the regime used by the sample-size sweep),
or a permutation p-value where the right block is permuted within
nearest-neighbor blocks of the conditioning variables so that its
dependence on the conditioning set is preserved under the null.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import erfc, sqrt

import numpy as np

from .errors import DegenerateInputError, ParameterError


@dataclass(frozen=True)
class CITestResult:
    statistic: float
    threshold: float | None
    p_value: float | None
    independent: bool
    method: str


@dataclass(frozen=True)
class KernelParams:
    """Configuration of the kernel test.

    Exactly one decision mode must be active: ``tolerance`` set (threshold
    mode) or ``permutations`` >= 1 (permutation mode). ``max_samples`` caps
    the Gram size by deterministic strided subsampling; kernel tests get
    little extra power beyond a few hundred rows while their cost grows
    cubically.
    """

    bandwidth: float | str = "median"
    ridge: float = 1e-3
    permutations: int = 0
    alpha: float = 0.05
    tolerance: float | None = None
    max_samples: int | None = None
    #: sharpening factor on the conditioning block's bandwidth; values < 1
    #: buy finer conditioning resolution on strongly collinear inputs at the
    #: price of a more conservative test
    cond_scale: float = 1.0

    def validate(self) -> None:
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "median":
                raise ParameterError(f"unknown bandwidth rule {self.bandwidth!r}")
        elif not self.bandwidth > 0:
            raise ParameterError("fixed bandwidth must be > 0")
        if not self.ridge > 0:
            raise ParameterError("ridge must be > 0")
        if not self.cond_scale > 0:
            raise ParameterError("cond_scale must be > 0")
        if not (0.0 < self.alpha < 1.0):
            raise ParameterError("alpha must be in (0,1)")
        if self.permutations < 0:
            raise ParameterError("permutation count must be >= 0")
        if self.tolerance is not None:
            if self.tolerance < 0:
                raise ParameterError("tolerance must be >= 0")
            if self.permutations > 0:
                raise ParameterError("choose tolerance mode or permutation mode, not both")
        elif self.permutations < 1:
            raise ParameterError(
                "permutation mode needs permutations >= 1 (or set a tolerance)"
            )
        if self.max_samples is not None and self.max_samples < 20:
            raise ParameterError("max_samples must be >= 20")


@dataclass(frozen=True)
class QuartetData:
    """Samples for one test: left/right scalar-or-vector signals at the two
    tested nodes, and up to four conditioning columns from the two
    conditioning nodes (six real variables in the scalar reduction)."""

    left: np.ndarray
    right: np.ndarray
    cond: np.ndarray

    def __post_init__(self):
        left = _as_columns(self.left)
        right = _as_columns(self.right)
        cond = _as_columns(self.cond)
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)
        object.__setattr__(self, "cond", cond)
        m = left.shape[0]
        if right.shape[0] != m or cond.shape[0] != m:
            raise ParameterError("left, right and cond must have equal row counts")
        if cond.shape[1] < 1 or cond.shape[1] > 4:
            raise ParameterError("conditioning block must have 1..4 columns")


def _as_columns(x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ParameterError("expected 1-d or 2-d sample array")
    return a


def _standardize(X: np.ndarray) -> np.ndarray:
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    if np.any(sd == 0.0):
        raise DegenerateInputError("constant column handed to a kernel test")
    return (X - mu) / sd


def _subsample(m: int, cap: int | None) -> np.ndarray | None:
    if cap is None or m <= cap:
        return None
    return np.unique(np.linspace(0, m - 1, cap).astype(int))


def _sq_dists(X: np.ndarray) -> np.ndarray:
    sq = np.sum(X * X, axis=1, keepdims=True)
    D2 = sq + sq.T - 2.0 * (X @ X.T)
    np.maximum(D2, 0.0, out=D2)
    return D2


def _median_bandwidth(D2: np.ndarray, m: int) -> float:
    """Median pairwise distance over at most 500 strided rows."""
    idx = _subsample(m, 500)
    d2 = D2 if idx is None else D2[np.ix_(idx, idx)]
    tri = d2[np.triu_indices_from(d2, k=1)]
    tri = tri[tri > 0]
    if tri.size == 0:
        return 1.0
    med = float(np.median(np.sqrt(tri)))
    return med if med > 0 else 1.0


def _raw_gram(X: np.ndarray, bandwidth, scale: float = 1.0) -> np.ndarray:
    D2 = _sq_dists(X)
    sigma = (
        _median_bandwidth(D2, X.shape[0]) if bandwidth == "median" else float(bandwidth)
    )
    sigma *= scale
    return np.exp(-D2 / (2.0 * sigma * sigma))


def _center(K: np.ndarray) -> np.ndarray:
    K = K - K.mean(axis=0, keepdims=True)
    K -= K.mean(axis=1, keepdims=True)
    K += K.mean()
    return K


@dataclass(frozen=True)
class _KciState:
    stat: float
    num: float
    rz: np.ndarray
    ax: np.ndarray
    ky_raw: np.ndarray
    kz_raw: np.ndarray
    cond: np.ndarray
    m: int


def _kci_parts(q: QuartetData, kp: KernelParams) -> _KciState:
    """Shared setup for statistic and permutation paths.

    Each tested block is augmented with the conditioning block through a
    product of per-block Gaussian Grams (bandwidth by rule per block), the
    conditioning projection is R = lam (Kz + lam I)^-1 with lam = ridge * m,
    and with A_x = R Kx R, A_y = R Ky R the raw squared Hilbert-Schmidt norm
    of the conditional cross-covariance is num = sum(A_x * A_y). The
    reported statistic divides by the self-norms, num / sqrt(|A_x| |A_y|),
    so its scale is comparable across sample sizes and bandwidths. The two
    tested blocks enter symmetrically: swapping them leaves the value
    bit-identical.
    """
    kp.validate()
    m = q.left.shape[0]
    if m < 20:
        raise ParameterError(f"need at least 20 samples, got {m}")
    idx = _subsample(m, kp.max_samples)
    left, right, cond = q.left, q.right, q.cond
    if idx is not None:
        left, right, cond = left[idx], right[idx], cond[idx]
        m = left.shape[0]
    left = _standardize(left)
    right = _standardize(right)
    cond = _standardize(cond)
    kx_raw = _raw_gram(left, kp.bandwidth)
    ky_raw = _raw_gram(right, kp.bandwidth)
    kz_raw = _raw_gram(cond, kp.bandwidth, scale=kp.cond_scale)
    kx = _center(kx_raw * kz_raw)
    ky = _center(ky_raw * kz_raw)
    kz = _center(kz_raw)
    lam = kp.ridge * m
    rz = lam * np.linalg.inv(kz + lam * np.eye(m))
    ax = rz @ kx @ rz
    ay = rz @ ky @ rz
    num = float(max(0.0, np.sum(ax * ay)))
    den = float(np.sqrt(np.sum(ax * ax) * np.sum(ay * ay)))
    stat = num / den if den > 0.0 else 0.0
    return _KciState(stat, num, rz, ax, ky_raw, kz_raw, cond, m)


def kci_statistic(q: QuartetData, kp: KernelParams) -> float:
    """Empirical conditional-dependence measure in [0, 1]; zero in the
    population exactly when left and right are independent given cond."""
    return _kci_parts(q, kp).stat


def _neighbor_blocks(cond: np.ndarray, block: int) -> list[np.ndarray]:
    """Greedy nearest-neighbor grouping of rows into blocks of ~equal size."""
    m = cond.shape[0]
    D2 = _sq_dists(cond)
    unassigned = np.ones(m, dtype=bool)
    blocks = []
    for i in range(m):
        if not unassigned[i]:
            continue
        cand = np.flatnonzero(unassigned)
        order = cand[np.lexsort((cand, D2[i, cand]))]
        take = order[: min(block, order.size)]
        unassigned[take] = False
        blocks.append(np.sort(take))
    return blocks


def _permutation_pvalue(state: _KciState, blocks: list[np.ndarray], B: int,
                        seed: int) -> float:
    """Share of block-permuted cross-covariance norms reaching the observed
    one. The self-norm denominator is held at its observed value, so this
    equals the p-value of the raw squared Hilbert-Schmidt norm."""
    gen = np.random.default_rng(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    w = state.rz @ state.ax @ state.rz
    exceed = 0
    base = np.arange(state.m)
    for _ in range(B):
        perm = base.copy()
        for blk in blocks:
            perm[blk] = blk[gen.permutation(blk.size)]
        kyp = _center(state.ky_raw[np.ix_(perm, perm)] * state.kz_raw)
        if max(0.0, float(np.sum(w * kyp))) >= state.num:
            exceed += 1
    return (1.0 + exceed) / (1.0 + B)


def kci_test(q: QuartetData, kp: KernelParams, seed: int = 0) -> CITestResult:
    """Kernel conditional-independence decision.

    Tolerance mode declares independence iff statistic <= tolerance
    (boundary inclusive). Permutation mode permutes the right block within
    nearest-neighbor blocks of the conditioning variables (block size
    max(5, m/20)) and declares independence iff the p-value >= alpha.
    """
    state = _kci_parts(q, kp)
    if kp.tolerance is not None:
        return CITestResult(state.stat, kp.tolerance, None,
                            state.stat <= kp.tolerance, "kci-tolerance")
    blocks = _neighbor_blocks(state.cond, max(5, state.m // 20))
    p = _permutation_pvalue(state, blocks, kp.permutations, seed)
    return CITestResult(state.stat, None, p, p >= kp.alpha, "kci-permutation")


def uncond_independence(x, y, kp: KernelParams, seed: int = 0) -> CITestResult:
    """Hilbert-Schmidt independence statistic with full-permutation p-value
    (or tolerance mode); used to split nodes across disjoint trees."""
    kp.validate()
    X = _as_columns(x)
    Y = _as_columns(y)
    m = X.shape[0]
    if Y.shape[0] != m:
        raise ParameterError("x and y must have equal row counts")
    if m < 20:
        raise ParameterError(f"need at least 20 samples, got {m}")
    idx = _subsample(m, kp.max_samples)
    if idx is not None:
        X, Y = X[idx], Y[idx]
        m = X.shape[0]
    kx = _center(_raw_gram(_standardize(X), kp.bandwidth))
    ky = _center(_raw_gram(_standardize(Y), kp.bandwidth))
    num = float(max(0.0, np.sum(kx * ky)))
    den = float(np.sqrt(np.sum(kx * kx) * np.sum(ky * ky)))
    stat = num / den if den > 0.0 else 0.0
    if kp.tolerance is not None:
        return CITestResult(stat, kp.tolerance, None, stat <= kp.tolerance,
                            "hsic-tolerance")
    gen = np.random.default_rng(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    exceed = 0
    for _ in range(kp.permutations):
        perm = gen.permutation(m)
        if max(0.0, float(np.sum(kx * ky[np.ix_(perm, perm)]))) >= num:
            exceed += 1
    p = (1.0 + exceed) / (1.0 + kp.permutations)
    return CITestResult(stat, None, p, p >= kp.alpha, "hsic-permutation")


EXACT_PCORR_THRESHOLD = 1e-10


def partial_correlation(cov: np.ndarray, c: int, d: int, cond) -> float:
    """Partial correlation of columns c and d given the cond columns, by
    Schur complement of the conditioning block."""
    cond = list(cond)
    idx = [c, d] + cond
    S = np.asarray(cov, dtype=float)[np.ix_(idx, idx)]
    A = S[:2, :2]
    if cond:
        B = S[:2, 2:]
        C = S[2:, 2:]
        try:
            A = A - B @ np.linalg.solve(C, B.T)
        except np.linalg.LinAlgError:
            raise DegenerateInputError("singular conditional covariance") from None
    denom = A[0, 0] * A[1, 1]
    if denom <= 0:
        raise DegenerateInputError("singular conditional covariance")
    return float(A[0, 1] / sqrt(denom))


def partial_corr_ci(data: np.ndarray, c: int, d: int, cond, *,
                    exact: bool = False, alpha: float = 0.05,
                    n_samples: int | None = None) -> CITestResult:
    """Gaussian partial-correlation test.

    ``data`` is a covariance matrix in exact mode (population oracle:
    independent iff |rho| < 1e-10) or when ``n_samples`` is given;
    otherwise it is a samples matrix (rows are observations) and the
    covariance is estimated from it. The finite-sample decision is a
    Fisher-z test at level alpha.
    """
    cond = list(cond)
    if exact:
        rho = partial_correlation(data, c, d, cond)
        return CITestResult(abs(rho), EXACT_PCORR_THRESHOLD, None,
                            abs(rho) < EXACT_PCORR_THRESHOLD, "pcorr-exact")
    X = np.asarray(data, dtype=float)
    if n_samples is None:
        if X.ndim != 2:
            raise ParameterError("samples must be a 2-d array")
        n = X.shape[0]
        cov = np.cov(X, rowvar=False)
    else:
        n = int(n_samples)
        cov = X
    rho = partial_correlation(cov, c, d, cond)
    dof = n - len(cond) - 3
    if dof <= 0:
        raise ParameterError("too few samples for a Fisher-z test")
    rho_c = min(1.0 - 1e-15, max(-1.0 + 1e-15, rho))
    z = 0.5 * np.log1p(2.0 * rho_c / (1.0 - rho_c))
    stat = sqrt(dof) * abs(z)
    p = erfc(stat / sqrt(2.0))
    return CITestResult(stat, None, p, p >= alpha, "pcorr-fisher")
