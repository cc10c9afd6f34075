"""Reference value for the two-constraint event used by the acceptance suite.

X_1..X_n i.i.d. N(0, 1), n = 100, event {mean(X) >= 0.2, 1.0 <= mean(X^2) <= 1.4}.

Naive Monte Carlo with 10^7 runs, drawn through sufficient statistics:
mean(X) ~ N(0, 1/n) and sum (X_i - mean)^2 ~ chi^2_{n-1}, independent, with
mean(X^2) = mean(X)^2 + chi^2_{n-1} / n. A one-dimensional quadrature of the same
representation is printed as a cross-check.
"""

import numpy as np
from scipy import integrate, stats

N_RUNS = 10_000_000
N = 100
SEED = 20240917


def naive(runs=N_RUNS, chunk=1_000_000, seed=SEED):
    rng = np.random.default_rng(seed)
    hits = 0
    for start in range(0, runs, chunk):
        m = min(chunk, runs - start)
        xbar = rng.normal(0.0, 1.0 / np.sqrt(N), m)
        m2 = xbar**2 + rng.chisquare(N - 1, m) / N
        hits += np.count_nonzero((xbar >= 0.2) & (m2 >= 1.0) & (m2 <= 1.4))
    p = hits / runs
    return p, np.sqrt(p * (1 - p) / runs), hits


def quadrature():
    def f(x):
        lo = stats.chi2.cdf(N * (1.0 - x * x), N - 1)
        hi = stats.chi2.cdf(N * (1.4 - x * x), N - 1)
        return stats.norm.pdf(x, 0.0, 1.0 / np.sqrt(N)) * (hi - lo)

    return integrate.quad(f, 0.2, 1.2, epsabs=1e-15, epsrel=1e-12)[0]


if __name__ == "__main__":
    p, se, hits = naive()
    print(f"naive: p = {p:.6e}, se = {se:.3e}, hits = {hits} / {N_RUNS}")
    print(f"95% interval: [{p - 1.96 * se:.6e}, {p + 1.96 * se:.6e}]")
    print(f"quadrature: {quadrature():.10e}")
