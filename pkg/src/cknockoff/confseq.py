"""Anytime-valid confidence sequence for the mean of a bounded stream.

Predictable plug-in empirical-Bernstein construction for observations in
[0, 1], applied after an affine map from the natural range [lo, hi].
"""

import math

import numpy as np


class EmpiricalBernsteinCS:
    """Two-sided confidence sequence at level `alpha` for a mean in [lo, hi].

    Parameters
    ----------
    alpha : float
        Miscoverage allowed over the whole (unbounded) sequence.
    lo, hi : float
        Almost-sure bounds on each observation.
    c : float
        Cap on the predictable bet size, in (0, 1).

    Examples
    --------
    >>> cs = EmpiricalBernsteinCS(0.05, -1.0, 1.0)
    >>> cs.update(np.full(200, 0.5))
    >>> cs.lower > 0
    True
    """

    def __init__(self, alpha, lo=0.0, hi=1.0, c=0.5):
        if not 0 < alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not hi > lo:
            raise ValueError("need hi > lo")
        self.alpha = alpha
        self.lo, self.hi = float(lo), float(hi)
        self.c = c
        self.log_term = math.log(2.0 / alpha)
        self.t = 0
        self._sum_x = 0.0
        self._sum_sq = 0.0
        self._mu_prev = 0.5
        self._var_prev = 0.25
        self._sum_lam = 0.0
        self._sum_lam_x = 0.0
        self._sum_pen = 0.0
        self._lo01 = 0.0
        self._hi01 = 1.0
        self.raw_sum = 0.0

    def _scale(self, x):
        return (x - self.lo) / (self.hi - self.lo)

    def _unscale(self, v):
        return self.lo + v * (self.hi - self.lo)

    def update(self, xs):
        for x in np.atleast_1d(xs):
            self._push(float(x))

    def _push(self, x_raw):
        self.raw_sum += x_raw
        x = min(max(self._scale(x_raw), 0.0), 1.0)
        t = self.t + 1
        lam = math.sqrt(2.0 * self.log_term / (self._var_prev * t * math.log(1.0 + t)))
        lam = min(lam, self.c)
        psi = (-math.log(1.0 - lam) - lam) / 4.0
        v = 4.0 * (x - self._mu_prev) ** 2
        self._sum_lam += lam
        self._sum_lam_x += lam * x
        self._sum_pen += v * psi
        self._sum_x += x
        mu = (0.5 + self._sum_x) / (t + 1)
        self._sum_sq += (x - mu) ** 2
        self._var_prev = (0.25 + self._sum_sq) / (t + 1)
        self._mu_prev = mu
        self.t = t
        centre = self._sum_lam_x / self._sum_lam
        width = (self.log_term + self._sum_pen) / self._sum_lam
        # running intersection keeps the sequence nested
        self._lo01 = max(self._lo01, centre - width)
        self._hi01 = min(self._hi01, centre + width)

    @property
    def lower(self):
        return self._unscale(self._lo01)

    @property
    def upper(self):
        return self._unscale(self._hi01)

    @property
    def mean(self):
        return self.raw_sum / self.t if self.t else float("nan")
