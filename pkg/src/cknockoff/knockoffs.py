"""Fixed-X knockoff construction and the augmented-model variance estimate."""

from dataclasses import dataclass

import numpy as np

from .linear_model import DesignFactors

IDENTITY_TOL = 1e-8
PSD_TOL = 1e-10
EIG_RTOL = 1e-10


class KnockoffConstructionError(ValueError):
    pass


class DimensionError(ValueError):
    pass


class UnavailableEstimateError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class KnockoffEnsemble:
    """Knockoff matrix plus every response-free quantity the statistics need.

    Attributes
    ----------
    X_tilde : ndarray (n, m)
    D : ndarray (m,)
        Diagonal of XᵀX - XᵀX̃.
    X_plus : ndarray (n, 2m)
        [X, X̃].
    gram_plus : ndarray (2m, 2m)
        X₊ᵀX₊.
    factors : DesignFactors
        Factorization of X (bases, inverse Gram).
    B : ndarray (n - m, m)
        V_resᵀX̃, the knockoff coordinates in the residual frame.
    O : ndarray (n - m, k)
        Orthonormal basis of the column space of `B`.
    """

    X_tilde: np.ndarray
    D: np.ndarray
    X_plus: np.ndarray
    gram_plus: np.ndarray
    factors: DesignFactors
    B: np.ndarray
    O: np.ndarray

    @property
    def n(self):
        return self.X_plus.shape[0]

    @property
    def m(self):
        return self.X_tilde.shape[1]

    @property
    def has_sigma_tilde(self):
        return self.n >= 2 * self.m + 1

    @property
    def resid_df(self):
        """n - rank(X₊). Equals n - 2m unless D = 2λ_min makes X₊ rank deficient."""
        return self.n - self.m - self.O.shape[1]

    def sigma_tilde2(self, y):
        return residual_variance(self, y)

    def validate(self, tol=IDENTITY_TOL):
        X = self.factors.X
        G = X.T @ X
        e1 = np.max(np.abs(self.X_tilde.T @ self.X_tilde - G))
        e2 = np.max(np.abs(X.T @ self.X_tilde - (G - np.diag(self.D))))
        return max(e1, e2) < tol, e1, e2


def equicorrelated_D(gram):
    lam_min = np.linalg.eigvalsh(gram)[0]
    s = min(1.0, 2.0 * lam_min)
    return np.full(gram.shape[0], s)


def build_knockoffs(instance_or_X, s_rule="equicorrelated", D=None, factors=None):
    """Construct fixed-X knockoffs.

    Parameters
    ----------
    instance_or_X : ProblemInstance or ndarray
        Only the design is used.
    s_rule : {"equicorrelated"}
        Rule for choosing D when `D` is not given.
    D : array_like, optional
        User supplied diagonal (e.g. from an SDP solver); validated.
    factors : DesignFactors, optional

    Returns
    -------
    KnockoffEnsemble
    """
    X = getattr(instance_or_X, "X", instance_or_X)
    X = np.asarray(X, dtype=float)
    n, m = X.shape
    if n < 2 * m:
        raise DimensionError(f"fixed-X knockoffs need n >= 2m (n={n}, m={m})")
    if factors is None:
        factors = DesignFactors.from_design(X)
    Sigma, Sinv = factors.gram, factors.gram_inv
    if D is None:
        if s_rule != "equicorrelated":
            raise ValueError(f"unknown s_rule {s_rule!r}")
        D = equicorrelated_D(Sigma)
    D = np.asarray(D, dtype=float).ravel()
    if D.shape != (m,) or np.any(D < 0) or np.any(D > 2):
        raise KnockoffConstructionError("D must be a length-m vector with entries in [0, 2]")

    if np.linalg.eigvalsh(2 * Sigma - np.diag(D))[0] < -PSD_TOL:
        raise KnockoffConstructionError("2Σ - diag(D) is not positive semidefinite")
    # CᵀC = 2D - D Σ⁻¹ D; a symmetric square root stands in for pivoted Cholesky
    M = 2 * np.diag(D) - (D[:, None] * Sinv * D[None, :])
    M = 0.5 * (M + M.T)
    evals, evecs = np.linalg.eigh(M)
    if evals[0] < -PSD_TOL * max(1.0, evals[-1]):
        raise KnockoffConstructionError("2D - DΣ⁻¹D is not positive semidefinite")
    # round-off eigenvalues of the singular direction (D = 2λ_min) are zeroed so rank(X₊) comes out exact
    evals = np.where(evals > EIG_RTOL * max(evals[-1], 0.0), evals, 0.0)
    C = np.sqrt(evals)[:, None] * evecs.T
    U = factors.V_res[:, :m]
    X_tilde = X @ (np.eye(m) - Sinv * D[None, :]) + U @ C

    X_plus = np.hstack([X, X_tilde])
    gram_plus = X_plus.T @ X_plus
    gram_plus = 0.5 * (gram_plus + gram_plus.T)
    B = factors.V_res.T @ X_tilde
    O = _column_basis(B)
    return KnockoffEnsemble(X_tilde, D, X_plus, gram_plus, factors, B, O)


def _column_basis(B, rtol=1e-10):
    if B.size == 0:
        return np.zeros((B.shape[0], 0))
    U, s, _ = np.linalg.svd(B, full_matrices=False)
    keep = s > rtol * max(s[0], 1e-300)
    return U[:, keep]


def residual_variance(ensemble, y):
    """σ̃² = ‖y - P_{X₊}y‖²/(n - rank X₊)."""
    n, m = ensemble.n, ensemble.m
    if n < 2 * m + 1:
        raise UnavailableEstimateError("σ̃² needs n >= 2m + 1")
    y = np.asarray(y, dtype=float)
    r = ensemble.factors.V_res.T @ y
    r = r - ensemble.O @ (ensemble.O.T @ r)
    return float(r @ r) / ensemble.resid_df


def save_ensemble(ensemble, xtilde_path, d_path):
    np.savetxt(xtilde_path, ensemble.X_tilde, delimiter=",", fmt="%.17g")
    np.savetxt(d_path, ensemble.D, delimiter=",", fmt="%.17g")


def load_ensemble(X, xtilde_path, d_path, tol=IDENTITY_TOL):
    """Rebuild an ensemble from a persisted (X̃, D) pair and re-check the identities."""
    X = np.asarray(X, dtype=float)
    X_tilde = np.atleast_2d(np.loadtxt(xtilde_path, delimiter=","))
    D = np.atleast_1d(np.loadtxt(d_path, delimiter=","))
    factors = DesignFactors.from_design(X)
    X_plus = np.hstack([X, X_tilde])
    B = factors.V_res.T @ X_tilde
    ens = KnockoffEnsemble(X_tilde, D, X_plus, X_plus.T @ X_plus, factors, B, _column_basis(B))
    ok, e1, e2 = ens.validate(tol)
    if not ok:
        raise KnockoffConstructionError(f"persisted ensemble violates identities ({e1:.2e}, {e2:.2e})")
    return ens
