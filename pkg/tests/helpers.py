"""Random symbol generators shared by the symbol tests and the acceptance suite."""
import numpy as np

from canontrace.symbols import BracketSymbol, ClassicalSymbol, HomTerm

MONOMIALS = {1: [(0,), (1,), (2,)], 2: [(0, 0), (2, 0), (1, 1), (0, 2), (1, 0)]}


def noninteger_order(rng, lo=-3.0, hi=1.5):
    while True:
        a = float(rng.uniform(lo, hi))
        if abs(a - round(a)) > 0.05:
            return round(a, 6)


def random_bracket(rng, n):
    """Full symbol sum c xi^m (mu^2 + |xi|^2)^{beta/2} of a noninteger order."""
    alpha = noninteger_order(rng)
    mu = round(float(rng.uniform(0.5, 2.0)), 6)
    k = int(rng.integers(1, 4))
    idx = rng.choice(len(MONOMIALS[n]), size=k, replace=False)
    terms = tuple((round(float(rng.normal()), 6), MONOMIALS[n][i], alpha - sum(MONOMIALS[n][i])) for i in idx)
    return BracketSymbol(n, terms, mu)


def random_classical(rng, n, depth=3):
    """Finite classical symbol with constant coefficients and a noninteger order."""
    alpha = noninteger_order(rng)
    comps = []
    for j in range(depth + 1):
        comp = []
        for m in MONOMIALS[n][: int(rng.integers(1, len(MONOMIALS[n]) + 1))]:
            comp.append(HomTerm(round(float(rng.normal()), 6), m, alpha - j - sum(m)))
        comps.append(comp)
    return ClassicalSymbol(alpha, n, comps, exact=True)


def random_symbol(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 3))
    return random_bracket(rng, n) if rng.random() < 0.6 else random_classical(rng, n)
