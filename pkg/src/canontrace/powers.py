r"""Resolvent parametrices, complex powers and logarithms of elliptic symbols.

Admissible weights here have an isotropic positive leading symbol
:math:`a(x,\xi) = w(x)|\xi|^q` with ``w > 0``; lower-order components are
arbitrary finite term sums.  The spectral cut is the negative real axis.

The parametrix of :math:`Q - \lambda` is built from terms
:math:`c(x)\xi^m|\xi|^s (a-\lambda)^{-k}`.  Integrating against
:math:`\lambda^{-z}` along the contour around the spectrum uses

.. math:: \frac{i}{2\pi}\int_C \lambda^{-z}(a-\lambda)^{-k}\,d\lambda
          = \frac{z(z+1)\cdots(z+k-2)}{(k-1)!}\, a^{-z-k+1},

obtained from the ``k = 1`` case (Cauchy formula) by differentiating
``k - 1`` times in ``a``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import CoefficientField
from .symbols import (
    ClassicalSymbol,
    HomTerm,
    _key_s,
    _multi_indices,
    _num,
    dxi_terms,
    reduce_monomial,
    residue_index,
    symbol_product,
    unit_directions,
    wodzicki_residue,
)

DEFAULT_DEPTH = 4


@dataclass(frozen=True)
class ResolventTerm:
    r"""Term :math:`c(x)\,\xi^m|\xi|^s\,(a(x,\xi)-\lambda)^{-k}`."""

    coeff: CoefficientField
    monomial: tuple
    radial_power: complex | float
    pole_order: int

    @property
    def numerator(self) -> HomTerm:
        return HomTerm(self.coeff, self.monomial, self.radial_power)

    def degree(self, q) -> float:
        """Homogeneity when ``lambda`` is given weight ``q``."""
        return _num(sum(self.monomial) + self.radial_power - q * self.pole_order)

    def evaluate_grid(self, xi, lam, w_values, q):
        xi = np.asarray(xi, dtype=float)
        r = np.linalg.norm(xi)
        a = w_values * r**q
        return self.numerator.values(xi) * (a - lam) ** (-self.pole_order)


def _from_hom(h: HomTerm, k: int) -> ResolventTerm:
    return ResolventTerm(h.coeff, h.monomial, h.radial_power, k)


def _simplify(terms, n):
    acc = {}
    for t in terms:
        for sg, m, s in reduce_monomial(t.monomial, t.radial_power, n):
            key = (m, _key_s(s), t.pole_order)
            c = t.coeff if sg > 0 else -t.coeff
            acc[key] = (acc[key][0] + c, s) if key in acc else (c, s)
    out = []
    for key in sorted(acc, key=lambda k: (k[2], k[1], k[0])):
        c, s = acc[key]
        if (c.is_constant and c.values == 0) or (not c.is_constant and not np.any(c.values)):
            continue
        out.append(ResolventTerm(c, key[0], s, key[2]))
    return tuple(out)


def leading_weight(Q: ClassicalSymbol):
    """Return ``(w, q)`` with ``sigma_q(Q) = w(x)|xi|^q`` and ``w > 0``.

    Raises
    ------
    ValueError
        If the leading part is not of this isotropic form or ``w`` is not
        strictly positive (non-elliptic or outside the spectral cut).
    """
    lead = Q.component(0)
    if len(lead) != 1 or any(lead[0].monomial) or abs(complex(lead[0].radial_power).imag) > 0:
        raise ValueError("leading symbol must be w(x)|xi|^q with a positive scalar field w")
    t = lead[0]
    q = float(complex(t.radial_power).real)
    if q <= 0:
        raise ValueError(f"weight must have positive order, got {q}")
    w = t.coeff
    if not w.is_real:
        raise ValueError("leading coefficient must be real")
    wmin = float(np.min(w.values))
    if wmin <= 0:
        raise ValueError(f"leading symbol is not elliptic with positive part (min w = {wmin:.3g})")
    return w, q


def _rt_dxi(t: ResolventTerm, k: int, w, q, n) -> list:
    out = [_from_hom(h, t.pole_order) for h in t.numerator.dxi(k)]
    # d/dxi_k (a - lam)^{-p} = -p (a - lam)^{-p-1} q w xi_k |xi|^{q-2}
    e = [0] * n
    e[k] = 1
    m = tuple(a + b for a, b in zip(t.monomial, e))
    out.append(ResolventTerm(t.coeff * w * (-t.pole_order * q), m, t.radial_power + q - 2, t.pole_order + 1))
    return out


def _rt_dx(t: ResolventTerm, i: int, w, q) -> list:
    out = []
    dc = t.coeff.derivative(i)
    if not dc.is_zero():
        out.append(ResolventTerm(dc, t.monomial, t.radial_power, t.pole_order))
    dw = w.derivative(i)
    if not dw.is_zero():
        # d/dx_i (a - lam)^{-p} = -p (a - lam)^{-p-1} (d_i w) |xi|^q
        out.append(ResolventTerm(t.coeff * dw * (-t.pole_order), t.monomial, t.radial_power + q, t.pole_order + 1))
    return out


def _rt_dx_gamma(terms, gamma, w, q):
    out = list(terms)
    for i, g in enumerate(gamma):
        for _ in range(g):
            out = [d for t in out for d in _rt_dx(t, i, w, q)]
    return out


def _hom_times_rt(h: HomTerm, t: ResolventTerm, extra_pole=0) -> ResolventTerm:
    m = tuple(a + b for a, b in zip(h.monomial, t.monomial))
    return ResolventTerm(h.coeff * t.coeff, m, h.radial_power + t.radial_power, t.pole_order + extra_pole)


def resolvent_parametrix(Q: ClassicalSymbol, J: int = DEFAULT_DEPTH) -> list:
    r"""Terms of :math:`b_{-q-j}` for ``j = 0..J``.

    ``b_{-q} = (a - lambda)^{-1}`` and for ``j >= 1``

    .. math:: b_{-q-j} = -(a-\lambda)^{-1}\sum_{\substack{k+l+|\gamma|=j\\ l<j}}
              \frac{(-i)^{|\gamma|}}{\gamma!}\,\partial_\xi^\gamma p_{q-k}\,
              \partial_x^\gamma b_{-q-l},

    so that the asymptotic product of :math:`\sigma(Q)-\lambda` with
    :math:`\sum_j b_{-q-j}` equals one through depth ``J``.
    """
    if not Q.available(J):
        raise ValueError(f"symbol truncated at depth {Q.depth} < {J}")
    w, q = leading_weight(Q)
    n = Q.dimension
    b = [(ResolventTerm(CoefficientField(1.0), (0,) * n, 0.0, 1),)]
    for j in range(1, J + 1):
        acc = []
        for g in range(j + 1):
            for gamma in _multi_indices(n, g):
                fac = (-1j) ** g / math.prod(math.factorial(k) for k in gamma)
                for k in range(j - g + 1):
                    l = j - g - k
                    if l >= j:
                        continue
                    pk = dxi_terms(Q.component(k), gamma)
                    if not pk or not b[l]:
                        continue
                    dbl = _rt_dx_gamma(b[l], gamma, w, q)
                    for h in pk:
                        for t in dbl:
                            acc.append(_hom_times_rt(h.scaled(-fac), t, extra_pole=1))
        b.append(_simplify(acc, n))
    return b


def contour_constant(k: int, z) -> complex:
    """``z (z+1) ... (z+k-2) / (k-1)!`` for pole order ``k >= 1``."""
    return _num(math.prod(z + i for i in range(k - 1)) / math.factorial(k - 1)) if k > 1 else 1.0


def contour_constant_dz(k: int, z) -> complex:
    if k <= 1:
        return 0.0
    total = 0.0
    for i in range(k - 1):
        total += math.prod(z + l for l in range(k - 1) if l != i)
    return _num(total / math.factorial(k - 1))


class PowerFamily:
    r"""Holomorphic family :math:`z \mapsto \sigma(Q^{-z})`.

    Parameters
    ----------
    Q : ClassicalSymbol
        Admissible weight.
    J : int
        Depth of the parametrix and of the returned symbols.
    """

    def __init__(self, Q: ClassicalSymbol, J: int = DEFAULT_DEPTH):
        self.Q = Q
        self.J = int(J)
        self.w, self.q = leading_weight(Q)
        self.logw = self.w.apply(np.log)
        self.parametrix = resolvent_parametrix(Q, J)

    def _w_power(self, p):
        if self.w.is_constant:
            return CoefficientField(np.exp(p * self.logw.values))
        return self.logw.apply(lambda v: np.exp(p * v))

    def at(self, z) -> ClassicalSymbol:
        """Symbol of ``Q^{-z}``, order ``-q z``."""
        z = _num(z)
        comps = []
        for terms in self.parametrix:
            out = []
            for t in terms:
                ck = contour_constant(t.pole_order, z)
                if ck == 0:
                    continue
                p = -z - t.pole_order + 1
                out.append(HomTerm(t.coeff * self._w_power(p) * ck, t.monomial, t.radial_power + self.q * p))
            comps.append(out)
        return ClassicalSymbol(-self.q * z, self.Q.dimension, comps, lengths=self.Q.lengths)

    def dz(self, z):
        r"""Analytic z-derivative ``(D, L)`` with :math:`\partial_z\sigma = D + L\log|\xi|\,\sigma(z)`.

        ``L = -q`` is returned as a scalar since the log factor multiplies the
        whole family.
        """
        z = _num(z)
        comps = []
        for terms in self.parametrix:
            out = []
            for t in terms:
                k = t.pole_order
                p = -z - k + 1
                wp = self._w_power(p)
                coef = wp * contour_constant_dz(k, z) - self.logw * wp * contour_constant(k, z)
                if coef.is_zero():
                    continue
                out.append(HomTerm(t.coeff * coef, t.monomial, t.radial_power + self.q * p))
            comps.append(out)
        return ClassicalSymbol(-self.q * z, self.Q.dimension, comps, lengths=self.Q.lengths), -self.q


def power_symbol(Q: ClassicalSymbol, z, J: int = DEFAULT_DEPTH) -> ClassicalSymbol:
    """Classical symbol of ``Q^{-z}`` through depth ``J``."""
    return PowerFamily(Q, J).at(z)


@dataclass(frozen=True)
class LogSymbol:
    r"""Symbol :math:`q\log|\xi| + \sigma_{cl}(x,\xi)` of :math:`\log Q`."""

    leading_log_coeff: float
    classical_part: ClassicalSymbol

    def evaluate(self, x, xi, J=None):
        J = self.classical_part.depth if J is None else J
        r = float(np.linalg.norm(xi))
        return self.leading_log_coeff * math.log(r) + sum(self.classical_part.evaluate(j, x, xi) for j in range(J + 1))

    def to_json(self) -> dict:
        return {"leading_log_coeff": self.leading_log_coeff, "classical_part": self.classical_part.to_json()}


def log_symbol(Q: ClassicalSymbol, J: int = DEFAULT_DEPTH) -> LogSymbol:
    r"""Symbol of :math:`\log Q = \partial_z Q^{z}|_{z=0}`.

    Since :math:`\sigma(Q^{-0}) = 1`, the derivative of the family at zero is
    :math:`D(0) - q\log|\xi|`, hence :math:`\log Q` has classical part
    :math:`-D(0)`.
    """
    fam = PowerFamily(Q, J)
    D, L = fam.dz(0.0)
    return LogSymbol(float(-L), D.scaled(-1.0))


def res_a_log_q(A: ClassicalSymbol, Q: ClassicalSymbol, lengths=None):
    r"""Residue :math:`\mathrm{res}(A\log Q)` for differential ``A``.

    For a differential ``A`` the product with ``q log|xi|`` only produces
    ``log|xi|`` times polynomials, so the degree ``-n`` log-free density comes
    from ``A`` composed with the classical part of ``log Q``.

    Raises
    ------
    ValueError
        If ``A`` is not differential (the density need not be global then).
    """
    if not A.is_differential():
        raise ValueError("res(A log Q) is only computed for differential A (including the identity)")
    if A.dimension != Q.dimension:
        raise ValueError("dimension mismatch")
    j = residue_index(A)
    if j is None:
        raise ValueError("A must have integer order")
    L = log_symbol(Q, max(j, 0))
    prod = symbol_product(A, L.classical_part, j)
    v = complex(wodzicki_residue(prod, lengths=lengths if lengths is not None else (Q.lengths or A.lengths)))
    # real symbols give a real residue up to FFT roundoff
    return v.real if abs(v.imag) <= 1e-12 * max(1.0, abs(v.real)) else v


def parametrix_residual(Q: ClassicalSymbol, J: int = DEFAULT_DEPTH, lams=(-1.0, 1j, -0.3 + 2j, -4.0 - 1j),
                        ndirs: int = 8, relative: bool = True) -> float:
    r"""Largest component of :math:`\sigma(Q-\lambda)\circ\sum_j b_{-q-j} - 1` through depth ``J``.

    The product is expanded with the same resolvent-term calculus and each
    homogeneous component is sampled on the coefficient grid, unit covectors
    and several spectral parameters off the cut.  With ``relative=True``
    the residual of each component is divided by the largest individual term
    in it (at least 1), so that high spatial derivatives on a small period
    cell do not inflate the scale.
    """
    w, q = leading_weight(Q)
    n = Q.dimension
    b = resolvent_parametrix(Q, J)
    worst = 0.0
    wv = w.values
    for j in range(J + 1):
        acc = []
        for g in range(j + 1):
            for gamma in _multi_indices(n, g):
                fac = (-1j) ** g / math.prod(math.factorial(k) for k in gamma)
                for k in range(j - g + 1):
                    l = j - g - k
                    pk = dxi_terms(Q.component(k), gamma)
                    if not pk or not b[l]:
                        continue
                    dbl = _rt_dx_gamma(b[l], gamma, w, q)
                    for h in pk:
                        for t in dbl:
                            acc.append(_hom_times_rt(h.scaled(fac), t))
        acc = _simplify(acc, n)
        # the -lambda part of sigma(Q - lambda) only meets gamma = 0, k = 0
        for xi in unit_directions(n, ndirs):
            for lam in lams:
                parts = [t.evaluate_grid(xi, lam, wv, q) for t in acc]
                parts += [-lam * t.evaluate_grid(xi, lam, wv, q) for t in b[j]]
                val = sum(parts) - (1.0 if j == 0 else 0.0)
                scale = max([1.0] + [float(np.max(np.abs(p))) for p in parts]) if relative else 1.0
                worst = max(worst, float(np.max(np.abs(val))) / scale)
    return worst
