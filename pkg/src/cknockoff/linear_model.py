"""Gaussian linear model primitives: problem container, per-hypothesis
decomposition, OLS inference and the Benjamini-Hochberg comparator."""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import special

RANK_TOL = 1e-10
NORM_TOL = 1e-8


class DegenerateDesignError(ValueError):
    """Raised when a design (or a sub-design) is numerically rank deficient."""


def standardize_columns(X):
    """Scale every column of `X` to unit Euclidean norm.

    Parameters
    ----------
    X : array_like, shape (n, m)

    Returns
    -------
    Xs : ndarray, shape (n, m)
    norms : ndarray, shape (m,)
        The original column norms.
    """
    X = np.asarray(X, dtype=float)
    norms = np.linalg.norm(X, axis=0)
    if np.any(norms <= 0) or not np.all(np.isfinite(norms)):
        raise DegenerateDesignError("design has a zero or non-finite column")
    return X / norms, norms


def _check_full_rank(X, what="design"):
    sv = np.linalg.svd(X, compute_uv=False)
    if sv.size == 0 or sv[-1] <= RANK_TOL * sv[0]:
        raise DegenerateDesignError(f"{what} is rank deficient")


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """Design `X` (unit-norm columns), response `y` and nominal level `alpha`.

    Use :meth:`from_raw` to standardize an arbitrary design on ingestion.
    """

    X: np.ndarray
    y: np.ndarray
    alpha: float
    names: tuple = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if X.ndim != 2:
            raise ValueError("X must be a matrix")
        n, m = X.shape
        if y.shape[0] != n:
            raise ValueError("y length does not match the rows of X")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if n < 2 * m:
            raise ValueError(f"need n >= 2m, got n={n}, m={m}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("non-finite entries in X or y")
        if np.max(np.abs(np.linalg.norm(X, axis=0) - 1.0)) > NORM_TOL:
            raise ValueError("columns of X must have unit norm (use from_raw)")
        _check_full_rank(X)
        if self.names is None:
            object.__setattr__(self, "names", tuple(f"X{j + 1}" for j in range(m)))
        elif len(self.names) != m:
            raise ValueError("names must have one entry per column")

    @classmethod
    def from_raw(cls, X, y, alpha, names=None):
        Xs, _ = standardize_columns(X)
        return cls(Xs, y, alpha, None if names is None else tuple(names))

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def m(self):
        return self.X.shape[1]

    def with_response(self, y):
        """Same design and level with a new response (no re-validation of X)."""
        new = object.__new__(ProblemInstance)
        object.__setattr__(new, "X", self.X)
        object.__setattr__(new, "y", np.asarray(y, dtype=float).ravel())
        object.__setattr__(new, "alpha", self.alpha)
        object.__setattr__(new, "names", self.names)
        return new


@dataclass(frozen=True, eq=False)
class DesignFactors:
    """Response-free factorizations of a design, shared by every hypothesis.

    Attributes
    ----------
    gram : XᵀX
    gram_inv : (XᵀX)⁻¹
    Q : orthonormal basis of span(X), shape (n, m)
    V_res : orthonormal basis of the complement of span(X), shape (n, n - m)
    """

    X: np.ndarray
    gram: np.ndarray
    gram_inv: np.ndarray
    Q: np.ndarray
    V_res: np.ndarray

    @classmethod
    def from_design(cls, X):
        X = np.asarray(X, dtype=float)
        n, m = X.shape
        if n <= m:
            raise DegenerateDesignError("need n > m")
        _check_full_rank(X)
        Qc, _ = np.linalg.qr(X, mode="complete")
        gram = X.T @ X
        gram_inv = np.linalg.inv(gram)
        gram_inv = 0.5 * (gram_inv + gram_inv.T)
        return cls(X, gram, gram_inv, Qc[:, :m], Qc[:, m:])

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def m(self):
        return self.X.shape[1]

    def v(self, j):
        """Unit vector along the part of X_j orthogonal to the other columns.

        Uses the identity Π⊥₋ⱼXⱼ ∝ X(XᵀX)⁻¹eⱼ, so no per-j QR is needed.
        """
        col = self.X @ self.gram_inv[:, j]
        return col / np.sqrt(self.gram_inv[j, j])

    def vtX(self, j):
        """vⱼᵀXⱼ = ‖Π⊥₋ⱼXⱼ‖ = 1/√((XᵀX)⁻¹)ⱼⱼ."""
        return 1.0 / np.sqrt(self.gram_inv[j, j])


@dataclass(eq=False)
class HypothesisDecomposition:
    """Orthogonal decomposition of R^n attached to hypothesis `j` and a response.

    `V_minus` is built lazily by Householder QR of X₋ⱼ in column order; the
    sampling code never needs it because vⱼ and V_res determine everything.
    """

    j: int
    v_j: np.ndarray
    V_res: np.ndarray
    rho: float
    S_j: tuple
    proj_minus_y: np.ndarray
    vtX: float
    eta_obs: float
    X_j: np.ndarray = field(repr=False)
    X_minus: np.ndarray = field(repr=False)

    @cached_property
    def V_minus(self):
        Q, R = np.linalg.qr(self.X_minus)
        d = np.abs(np.diag(R))
        if d.size and d.min() <= RANK_TOL * d.max():
            raise DegenerateDesignError(f"X without column {self.j} is rank deficient")
        return Q

    @property
    def df(self):
        return self.V_res.shape[1]


def decompose(instance, j, factors=None):
    """Decompose the response of `instance` relative to hypothesis `j`.

    Parameters
    ----------
    instance : ProblemInstance
    j : int
        Zero-based column index.
    factors : DesignFactors, optional
        Precomputed factorization of ``instance.X``.

    Returns
    -------
    HypothesisDecomposition
    """
    m = instance.m
    if not 0 <= j < m:
        raise IndexError(f"hypothesis index {j} out of range for m={m}")
    if factors is None:
        factors = DesignFactors.from_design(instance.X)
    y = instance.y
    X = instance.X
    v = factors.v(j)
    proj_y = factors.Q @ (factors.Q.T @ y)
    eta = float(v @ y)
    proj_minus_y = proj_y - eta * v
    rss = float(np.sum((y - proj_y) ** 2))
    rho = np.sqrt(max(rss + eta**2, 0.0))
    X_minus = np.delete(X, j, axis=1)
    S_j = (X_minus.T @ y, float(y @ y))
    return HypothesisDecomposition(
        j=j,
        v_j=v,
        V_res=factors.V_res,
        rho=rho,
        S_j=S_j,
        proj_minus_y=proj_minus_y,
        vtX=factors.vtX(j),
        eta_obs=eta,
        X_j=X[:, j].copy(),
        X_minus=X_minus,
    )


@dataclass(frozen=True, eq=False)
class OlsSummary:
    beta_hat: np.ndarray
    sigma_hat2: float
    t_stats: np.ndarray
    p_values: np.ndarray


def ols_from_moments(gram_inv, xty, rss, df):
    """OLS summary from XᵀX inverse, Xᵀy and the residual sum of squares."""
    beta = gram_inv @ xty
    sigma2 = max(rss, 0.0) / df
    se = np.sqrt(sigma2 * np.diag(gram_inv))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, beta / se, np.sign(beta) * np.inf)
    t = np.nan_to_num(t, nan=0.0)
    p = 2.0 * special.stdtr(df, -np.abs(t))
    return OlsSummary(beta, sigma2, t, np.clip(p, 0.0, 1.0))


def ols_fit(instance, factors=None):
    """Ordinary least squares with two-sided t-test p-values (df = n - m)."""
    if factors is None:
        factors = DesignFactors.from_design(instance.X)
    y = instance.y
    xty = instance.X.T @ y
    qty = factors.Q.T @ y
    rss = float(y @ y - qty @ qty)
    # recompute directly when cancellation would dominate
    if rss < 1e-8 * float(y @ y):
        r = y - factors.Q @ qty
        rss = float(r @ r)
    return ols_from_moments(factors.gram_inv, xty, rss, instance.n - instance.m)


def null_sigma_hat(decomposition, y=None):
    """Unbiased estimate of σ under Hⱼ: ρ²/(n - m + 1), returned as σ̂⁽ʲ⁾ (not squared)."""
    return np.sqrt(null_sigma_hat2(decomposition))


def null_sigma_hat2(decomposition):
    return decomposition.rho**2 / (decomposition.df + 1)


def bh_reject(p_values, alpha):
    """Benjamini-Hochberg step-up rejection set (sorted zero-based indices)."""
    p = np.asarray(p_values, dtype=float)
    m = p.size
    if m == 0:
        return np.array([], dtype=int)
    order = np.argsort(p, kind="stable")
    ok = p[order] <= alpha * np.arange(1, m + 1) / m
    if not ok.any():
        return np.array([], dtype=int)
    R = np.nonzero(ok)[0][-1] + 1
    return np.sort(np.nonzero(p <= alpha * R / m)[0])


def bh_adjusted(p_values):
    """BH adjusted p-values: j ∈ BH(q) iff adjusted pⱼ ≤ q."""
    p = np.asarray(p_values, dtype=float)
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    adj_sorted = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(m)
    out[order] = adj_sorted
    return out
