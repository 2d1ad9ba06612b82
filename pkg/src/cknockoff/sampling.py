"""Conditional null sampling given Sⱼ.

Under Hⱼ and given Sⱼ the response is z(η, u) = Π₋ⱼy + vⱼη + √(ρ² - η²)·V_res·u
with u uniform on the unit sphere of R^{n-m} and η having the law below.
"""

from dataclasses import dataclass

import numpy as np
from scipy import special

DEGENERATE_MASS = 1e-14


def _to_t(x, rho, df):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = x * np.sqrt(df) / np.sqrt(np.maximum(rho**2 - x**2, 0.0))
    return s


def eta_cdf(x, rho, df):
    """F_η(x) = F_{t,df}(x√df / √(ρ² - x²)), clamped to 0/1 outside (-ρ, ρ)."""
    x = np.asarray(x, dtype=float)
    out = special.stdtr(df, _to_t(np.clip(x, -rho, rho), rho, df))
    out = np.where(x <= -rho, 0.0, np.where(x >= rho, 1.0, out))
    return out if out.ndim else float(out)


def eta_sf(x, rho, df):
    """1 - F_η(x), accurate in the upper tail."""
    x = np.asarray(x, dtype=float)
    return eta_cdf(-x, rho, df)


def _from_t(s, rho, df):
    return s * rho / np.sqrt(df + s * s)


def eta_quantile(p, rho, df):
    """Inverse of :func:`eta_cdf` via the closed form x = sρ/√(df + s²)."""
    p = np.asarray(p, dtype=float)
    s = special.stdtrit(df, p)
    out = _from_t(s, rho, df)
    return out if out.ndim else float(out)


def eta_isf(q, rho, df):
    """x with 1 - F_η(x) = q."""
    return -eta_quantile(q, rho, df)


def merge_intervals(intervals, lo, hi):
    """Clip to [lo, hi], drop empties and merge overlaps."""
    cl = sorted((max(a, lo), min(b, hi)) for a, b in intervals)
    out = []
    for a, b in cl:
        if b < a:
            continue
        if out and a <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


def interval_mass(a, b, rho, df):
    """Q-mass of [a, b], using the survival side for right-hand intervals."""
    if b <= a:
        return 0.0
    if a >= 0:
        return max(float(eta_sf(a, rho, df) - eta_sf(b, rho, df)), 0.0)
    return max(float(eta_cdf(b, rho, df) - eta_cdf(a, rho, df)), 0.0)


class IntervalSet:
    """Finite union of η-intervals with their Q-masses and an inverse-CDF sampler."""

    def __init__(self, intervals, rho, df):
        self.rho, self.df = rho, df
        self.intervals = merge_intervals(intervals, -rho, rho)
        self.masses = np.array([interval_mass(a, b, rho, df) for a, b in self.intervals])
        # per-interval anchor on the accurate side: sf(a) for a >= 0, cdf(a) otherwise
        self._right = np.array([a >= 0 for a, _ in self.intervals], dtype=bool)
        self._anchor = np.array([float(eta_sf(a, rho, df)) if a >= 0 else float(eta_cdf(a, rho, df))
                                 for a, _ in self.intervals])
        self._lo = np.array([a for a, _ in self.intervals], dtype=float)
        self._hi = np.array([b for _, b in self.intervals], dtype=float)
        tot = self.masses.sum()
        self._cum = np.cumsum(self.masses) / tot if tot > 0 else np.zeros(len(self.intervals))

    @property
    def mass(self):
        return float(self.masses.sum())

    @property
    def degenerate(self):
        return self.mass < DEGENERATE_MASS

    def contains(self, eta):
        eta = np.asarray(eta, dtype=float)
        ok = np.zeros(eta.shape, dtype=bool)
        for a, b in self.intervals:
            ok |= (eta >= a) & (eta <= b)
        return ok

    def _uniform_parts(self, rng, count):
        if self.mass <= 0:
            raise ValueError("sampling region has zero mass")
        k = np.minimum(np.searchsorted(self._cum, rng.random(count), side="right"), len(self.intervals) - 1)
        frac = rng.random(count) * self.masses[k]
        right = self._right[k]
        # right-hand pieces invert the survival function, the others the cdf
        p = np.clip(np.where(right, self._anchor[k] - frac, self._anchor[k] + frac), 0.0, 1.0)
        return p, right, self._lo[k], self._hi[k]

    def sample_eta(self, rng, count):
        """Inverse-CDF draws of η from Q restricted to the set."""
        return _invert(self.rho, self.df, *self._uniform_parts(rng, count))


def _invert(rho, df, p, right, lo, hi):
    s = special.stdtrit(df, p)
    out = np.where(right, -1.0, 1.0) * _from_t(s, rho, df)
    return np.clip(out, lo, hi)


def sample_strata(rng, sets, count):
    """`count` draws from each IntervalSet in `sets` (same ρ, df), concatenated in order."""
    parts = [s._uniform_parts(rng, count) for s in sets]
    return _invert(sets[0].rho, sets[0].df, *(np.concatenate(x) for x in zip(*parts)))


class SamplingRegion(IntervalSet):
    """A = A⁻ ∪ (a1, a2)ᶜ inside [-ρ, ρ].

    Also exposes the two strata used by the calibration estimator:
    `plus` = (a1, a2)ᶜ (where Tⱼ ≥ c) and `inner` = A⁻ ∩ (a1, a2).
    """

    def __init__(self, a1, a2, A_minus, rho, df):
        if a2 < a1:
            raise ValueError("need a1 <= a2")
        self.a1, self.a2 = float(a1), float(a2)
        self.A_minus = merge_intervals(list(A_minus), -rho, rho)
        super().__init__([(-rho, self.a1), (self.a2, rho)] + self.A_minus, rho, df)
        self.plus = IntervalSet([(-rho, self.a1), (self.a2, rho)], rho, df)
        inner = [(max(a, self.a1), min(b, self.a2)) for a, b in self.A_minus]
        self.inner = IntervalSet([iv for iv in inner if iv[1] > iv[0]], rho, df)

    @classmethod
    def full(cls, rho, df):
        return cls(0.0, 0.0, [], rho, df)

    @property
    def omega_plus_mass(self):
        return float(eta_cdf(self.a1, self.rho, self.df) + eta_sf(self.a2, self.rho, self.df))


def sphere(rng, count, dim):
    u = rng.standard_normal((count, dim))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


@dataclass
class ConditionalSampler:
    """Draws z from the conditional null law given Sⱼ, restricted to `region`."""

    decomposition: object
    region: SamplingRegion
    rng_seed: object = None

    def __post_init__(self):
        self.rng = np.random.default_rng(self.rng_seed)

    def draw(self, count):
        """Return (eta, u) with u rows uniform on the unit sphere."""
        eta = self.region.sample_eta(self.rng, count)
        u = sphere(self.rng, count, self.decomposition.df)
        return eta, u

    def assemble(self, eta, u):
        return assemble_z(self.decomposition, eta, u)

    def sample(self, count):
        return self.assemble(*self.draw(count))


def assemble_z(dec, eta, u):
    """Rows z(η, u) = Π₋ⱼy + vⱼη + √(ρ² - η²)·V_res·u."""
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    u = np.atleast_2d(u)
    zeta = np.sqrt(np.maximum(dec.rho**2 - eta**2, 0.0))
    return dec.proj_minus_y[None, :] + eta[:, None] * dec.v_j[None, :] + zeta[:, None] * (u @ dec.V_res.T)


def sample_conditional(sampler, count):
    return sampler.sample(count)
