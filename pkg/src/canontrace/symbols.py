r"""Classical symbols built from monomial times radial-power terms.

A classical symbol of order :math:`\alpha` on an ``n``-dimensional periodic
chart is stored as a list of positively homogeneous components
:math:`\sigma_{\alpha-j}`, each a finite sum of terms

.. math:: c(x)\, \xi^m |\xi|^s, \qquad |m| + s = \alpha - j .

This class is closed under the asymptotic product, admits exact
:math:`\xi`-derivatives and exact sphere moments, so cut-off integrals and
residue densities can be computed in closed form.

Monomials are kept in a canonical reduced form: in one dimension
``xi**2 -> |xi|**2``; in two dimensions ``xi_1**2 -> |xi|**2 - xi_2**2``.
On the unit circle this leaves the linearly independent family
``{sin^b, cos sin^b}``, so symbols that vanish identically reduce to an
empty term list.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy import integrate, special

from .fields import CoefficientField, _decode, _encode

DEGREE_TOL = 1e-9


def _num(v):
    v = complex(v)
    return float(v.real) if v.imag == 0.0 else v


def _as_field(c) -> CoefficientField:
    return c if isinstance(c, CoefficientField) else CoefficientField(c)


def sphere_moment(m, n: int) -> float:
    r"""Exact integral of :math:`\xi^m` over the unit sphere :math:`S^{n-1}`.

    Parameters
    ----------
    m : sequence of int
        Monomial exponents, one per dimension.
    n : int
        Dimension of the cotangent fiber (1 or 2).

    Returns
    -------
    float
        ``0`` if any exponent is odd, else
        ``2 * prod(Gamma((m_i + 1) / 2)) / Gamma((|m| + n) / 2)``.

    Examples
    --------
    >>> sphere_moment((0, 0), 2) / np.pi
    2.0
    """
    m = tuple(int(k) for k in m)
    if len(m) != n:
        raise ValueError(f"monomial {m} does not match dimension {n}")
    if n not in (1, 2):
        raise ValueError(f"dimension must be 1 or 2, got {n}")
    if any(k < 0 for k in m):
        raise ValueError(f"negative monomial exponent in {m}")
    if any(k % 2 for k in m):
        return 0.0
    logv = math.log(2.0) + sum(math.lgamma((k + 1) / 2) for k in m) - math.lgamma((sum(m) + n) / 2)
    return math.exp(logv)


def reduce_monomial(m, s, n):
    """Canonical form of ``xi^m |xi|^s`` as a list of ``(sign, m', s')``."""
    m = tuple(int(k) for k in m)
    if n == 1:
        r = m[0] % 2
        return [(1, (r,), s + (m[0] - r))]
    if n == 2 and m[0] >= 2:
        out = []
        for sg, mm, ss in reduce_monomial((m[0] - 2, m[1]), s + 2, n):
            out.append((sg, mm, ss))
        for sg, mm, ss in reduce_monomial((m[0] - 2, m[1] + 2), s, n):
            out.append((-sg, mm, ss))
        return out
    return [(1, m, s)]


def _key_s(s):
    s = complex(s)
    return (round(s.real, 12), round(s.imag, 12))


@dataclass(frozen=True)
class HomTerm:
    r"""Single term :math:`c(x)\,\xi^m |\xi|^s`."""

    coeff: CoefficientField
    monomial: tuple
    radial_power: complex | float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "coeff", _as_field(self.coeff))
        object.__setattr__(self, "monomial", tuple(int(k) for k in self.monomial))
        object.__setattr__(self, "radial_power", _num(self.radial_power))
        if any(k < 0 for k in self.monomial):
            raise ValueError(f"negative monomial exponent in {self.monomial}")

    @property
    def degree(self):
        return _num(sum(self.monomial) + self.radial_power)

    def evaluate(self, x, xi):
        xi = np.asarray(xi, dtype=float)
        r = np.linalg.norm(xi)
        c = self.coeff.at(x) if x is not None else self.coeff.values
        return c * np.prod(xi ** np.array(self.monomial)) * r ** self.radial_power

    def values(self, xi):
        """Values on the coefficient grid (or a scalar) at a fixed ``xi``."""
        xi = np.asarray(xi, dtype=float)
        r = np.linalg.norm(xi)
        return self.coeff.values * (np.prod(xi ** np.array(self.monomial)) * r ** self.radial_power)

    def dxi(self, k: int) -> list:
        r"""Exact :math:`\partial_{\xi_k}` as a list of terms."""
        out = []
        m = self.monomial
        if m[k] > 0:
            mm = list(m)
            mm[k] -= 1
            out.append(HomTerm(self.coeff * m[k], tuple(mm), self.radial_power))
        if self.radial_power != 0:
            mm = list(m)
            mm[k] += 1
            out.append(HomTerm(self.coeff * self.radial_power, tuple(mm), self.radial_power - 2))
        return out

    def dx(self, k: int) -> "HomTerm":
        return HomTerm(self.coeff.derivative(k), self.monomial, self.radial_power)

    def times(self, other: "HomTerm") -> "HomTerm":
        m = tuple(a + b for a, b in zip(self.monomial, other.monomial))
        return HomTerm(self.coeff * other.coeff, m, self.radial_power + other.radial_power)

    def scaled(self, c) -> "HomTerm":
        return HomTerm(self.coeff * c, self.monomial, self.radial_power)

    def to_json(self) -> dict:
        return {
            "monomial": list(self.monomial),
            "radial_power": _encode(self.radial_power),
            "coeff": self.coeff.to_json(),
        }


def simplify_terms(terms, n: int) -> tuple:
    """Merge equal ``(monomial, radial_power)`` keys after canonical reduction."""
    acc = {}
    order = []
    for t in terms:
        for sg, m, s in reduce_monomial(t.monomial, t.radial_power, n):
            key = (m, _key_s(s))
            c = t.coeff if sg > 0 else -t.coeff
            if key in acc:
                acc[key] = (acc[key][0] + c, acc[key][1])
            else:
                acc[key] = (c, s)
                order.append(key)
    out = []
    for key in sorted(order, key=lambda k: (k[1], k[0])):
        c, s = acc[key]
        if c.is_constant and c.values == 0:
            continue
        if not c.is_constant and not np.any(c.values):
            continue
        out.append(HomTerm(c, key[0], s))
    return tuple(out)


class ClassicalSymbol:
    r"""Classical symbol :math:`\sigma \sim \sum_j \sigma_{\alpha-j}`.

    Parameters
    ----------
    order : float or complex
        The order :math:`\alpha`.
    dimension : int
        Cotangent dimension ``n`` (1 or 2).
    components : sequence of sequence of HomTerm
        ``components[j]`` holds the terms of degree ``order - j``.
    exact : bool
        If true the symbol is a finite sum and every component beyond the
        stored depth is zero (e.g. differential or multiplication symbols).
    lengths : sequence of float, optional
        Period lengths of the chart; inferred from grid coefficients.
    """

    def __init__(self, order, dimension, components, *, exact=False, lengths=None, simplify=True):
        self.order = _num(order)
        self.dimension = int(dimension)
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {dimension}")
        comps = []
        for j, terms in enumerate(components):
            terms = tuple(terms)
            for t in terms:
                if len(t.monomial) != self.dimension:
                    raise ValueError(f"monomial {t.monomial} does not match dimension {self.dimension}")
                if abs(complex(t.degree) - complex(self.order - j)) > DEGREE_TOL:
                    raise ValueError(
                        f"term of degree {t.degree} in component j={j} of order {self.order} "
                        f"(expected {self.order - j})"
                    )
            comps.append(simplify_terms(terms, self.dimension) if simplify else terms)
        if not comps:
            comps = [()]
        self.components = tuple(comps)
        self.exact = bool(exact)
        if lengths is None:
            for terms in self.components:
                for t in terms:
                    if not t.coeff.is_constant:
                        lengths = t.coeff.lengths
                        break
                if lengths is not None:
                    break
        self.lengths = None if lengths is None else tuple(float(L) for L in lengths)

    # access -------------------------------------------------------------
    @property
    def depth(self) -> int:
        return len(self.components) - 1

    def component(self, j: int) -> tuple:
        """Terms of the degree ``order - j`` component."""
        if j < 0:
            raise ValueError("component index must be nonnegative")
        if j <= self.depth:
            return self.components[j]
        if self.exact:
            return ()
        raise ValueError(f"component j={j} beyond depth {self.depth} of a truncated symbol")

    def available(self, J: int) -> bool:
        return self.exact or J <= self.depth

    def truncate(self, J: int) -> "ClassicalSymbol":
        comps = [self.component(j) for j in range(J + 1)]
        exact = self.exact and J >= self.depth
        return ClassicalSymbol(self.order, self.dimension, comps, exact=exact, lengths=self.lengths, simplify=False)

    def is_differential(self) -> bool:
        """Polynomial in ``xi`` with integer order and a finite expansion."""
        if not self.exact:
            return False
        for j, terms in enumerate(self.components):
            for t in terms:
                s = complex(t.radial_power)
                if s.imag or s.real < 0 or s.real % 2 or abs(s.real - round(s.real)) > 0:
                    return False
                d = complex(t.degree)
                if d.imag or d.real < 0 or d.real != round(d.real):
                    return False
        return True

    def evaluate(self, j: int, x, xi):
        """Value of component ``j`` at the point ``x`` and covector ``xi``."""
        return _num(sum(t.evaluate(x, xi) for t in self.component(j)) if self.component(j) else 0.0)

    def component_values(self, j: int, xi):
        """Component ``j`` on the coefficient grid at a fixed ``xi``."""
        total = 0.0
        for t in self.component(j):
            total = total + t.values(xi)
        return total

    def component_sup(self, j: int, ndirs: int = 16) -> float:
        """Sup of ``|sigma_{alpha-j}|`` over the grid and sampled unit covectors."""
        if not self.component(j):
            return 0.0
        best = 0.0
        for xi in unit_directions(self.dimension, ndirs):
            best = max(best, float(np.max(np.abs(self.component_values(j, xi)))))
        return best

    def sphere_integral(self, j: int) -> CoefficientField:
        r"""Coefficient field :math:`\int_{S^{n-1}} \sigma_{\alpha-j}(x,\xi)\,d\xi`."""
        total = CoefficientField(0.0)
        for t in self.component(j):
            mom = sphere_moment(t.monomial, self.dimension)
            if mom:
                total = total + t.coeff * mom
        return total

    # algebra ------------------------------------------------------------
    def _combine(self, other, sign):
        if self.dimension != other.dimension:
            raise ValueError("dimension mismatch")
        if abs(complex(self.order) - complex(other.order)) > DEGREE_TOL:
            d = complex(self.order) - complex(other.order)
            if abs(d.imag) > DEGREE_TOL or abs(d.real - round(d.real)) > DEGREE_TOL:
                raise ValueError(f"orders {self.order} and {other.order} differ by a non-integer")
        hi = self if complex(self.order).real >= complex(other.order).real else other
        shift_s = int(round(complex(hi.order - self.order).real))
        shift_o = int(round(complex(hi.order - other.order).real))
        exact = self.exact and other.exact
        if exact:
            J = max(self.depth + shift_s, other.depth + shift_o)
        else:
            lims = []
            if not self.exact:
                lims.append(self.depth + shift_s)
            if not other.exact:
                lims.append(other.depth + shift_o)
            J = min(lims)
        comps = []
        for j in range(J + 1):
            terms = []
            if j - shift_s >= 0:
                terms.extend(self.component(j - shift_s) if self.available(j - shift_s) else ())
            if j - shift_o >= 0:
                if other.available(j - shift_o):
                    terms.extend(t.scaled(sign) for t in other.component(j - shift_o))
            comps.append(terms)
        return ClassicalSymbol(hi.order, self.dimension, comps, exact=exact, lengths=self.lengths or other.lengths)

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def scaled(self, c) -> "ClassicalSymbol":
        comps = [[t.scaled(c) for t in terms] for terms in self.components]
        return ClassicalSymbol(self.order, self.dimension, comps, exact=self.exact, lengths=self.lengths)

    def max_gap(self, other, J=None, ndirs=16, relative=False) -> float:
        """Largest component sup-norm of ``self - other`` through depth ``J``.

        With ``relative=True`` each component gap is divided by the sup of the
        corresponding component of ``other`` (or 1 if that component is
        smaller), which is the meaningful scale once spatial derivatives of
        high order enter the lower components.
        """
        diff = self - other
        J = diff.depth if J is None else J
        worst = 0.0
        for j in range(J + 1):
            gap = diff.component_sup(j, ndirs)
            if relative:
                gap /= max(1.0, other.component_sup(j, ndirs) if other.available(j) else 1.0)
            worst = max(worst, gap)
        return worst

    # construction helpers ----------------------------------------------
    @classmethod
    def zero(cls, dimension, order=0.0, lengths=None):
        return cls(order, dimension, [()], exact=True, lengths=lengths)

    @classmethod
    def multiplication(cls, f, dimension, lengths=None):
        """Order-0 symbol of the multiplication operator by ``f``."""
        return cls(0.0, dimension, [[HomTerm(_as_field(f), (0,) * dimension, 0.0)]], exact=True, lengths=lengths)

    @classmethod
    def radial(cls, s, dimension, coeff=1.0, lengths=None, exact=True):
        """``coeff * |xi|^s`` with all lower components zero."""
        return cls(s, dimension, [[HomTerm(_as_field(coeff), (0,) * dimension, s)]], exact=exact, lengths=lengths)

    # serialization ------------------------------------------------------
    def to_json(self) -> dict:
        out = {
            "order": _encode(self.order),
            "dimension": self.dimension,
            "exact": self.exact,
            "components": [
                {"j": j, "terms": [t.to_json() for t in terms]} for j, terms in enumerate(self.components)
            ],
        }
        if self.lengths is not None:
            out["lengths"] = list(self.lengths)
        return out

    @classmethod
    def from_json(cls, data: dict) -> "ClassicalSymbol":
        unknown = set(data) - {"order", "dimension", "components", "exact", "lengths"}
        if unknown:
            raise ValueError(f"unknown symbol keys {sorted(unknown)}")
        n = int(data["dimension"])
        lengths = data.get("lengths")
        comps = {}
        for comp in data["components"]:
            extra = set(comp) - {"j", "terms"}
            if extra:
                raise ValueError(f"unknown component keys {sorted(extra)}")
            terms = []
            for t in comp["terms"]:
                extra = set(t) - {"monomial", "radial_power", "coeff"}
                if extra:
                    raise ValueError(f"unknown term keys {sorted(extra)}")
                coeff = CoefficientField.from_json(t["coeff"], dimension=n, lengths=lengths)
                terms.append(HomTerm(coeff, tuple(t["monomial"]), _decode(t.get("radial_power", 0.0))))
            comps[int(comp["j"])] = terms
        J = max(comps) if comps else 0
        return cls(
            _decode(data["order"]),
            n,
            [comps.get(j, ()) for j in range(J + 1)],
            exact=bool(data.get("exact", False)),
            lengths=lengths,
        )

    def __repr__(self):
        nterms = [len(c) for c in self.components]
        return f"ClassicalSymbol(order={self.order}, n={self.dimension}, terms={nterms}, exact={self.exact})"


def unit_directions(n: int, count: int = 16) -> np.ndarray:
    if n == 1:
        return np.array([[1.0], [-1.0]])
    th = (np.arange(count) + 0.37) * (2 * np.pi / count)
    return np.stack([np.cos(th), np.sin(th)], axis=1)


def _multi_indices(n: int, total: int):
    for gamma in itertools.product(range(total + 1), repeat=n):
        if sum(gamma) == total:
            yield gamma


def dxi_terms(terms, gamma) -> list:
    out = list(terms)
    for k, g in enumerate(gamma):
        for _ in range(g):
            out = [d for t in out for d in t.dxi(k)]
    return out


def dx_terms(terms, gamma) -> list:
    out = list(terms)
    for k, g in enumerate(gamma):
        for _ in range(g):
            out = [t.dx(k) for t in out]
    return out


def symbol_product(A: ClassicalSymbol, B: ClassicalSymbol, J: int) -> ClassicalSymbol:
    r"""Asymptotic product symbol of the composition ``A B`` through depth ``J``.

    .. math:: \sigma(AB)_{\alpha_A+\alpha_B-j} = \sum_{k+l+|\gamma|=j}
              \frac{(-i)^{|\gamma|}}{\gamma!}\,
              \partial_\xi^\gamma \sigma_{\alpha_A-k}(A)\,
              \partial_x^\gamma \sigma_{\alpha_B-l}(B)

    Raises
    ------
    ValueError
        On dimension mismatch, incompatible coefficient grids, or if ``J``
        exceeds the depth of a truncated input.
    """
    if A.dimension != B.dimension:
        raise ValueError("dimension mismatch")
    if not A.available(J) or not B.available(J):
        raise ValueError(f"depth J={J} exceeds the available depth of a truncated input (A: {A.depth}, B: {B.depth})")
    n = A.dimension
    comps = []
    for j in range(J + 1):
        terms = []
        for g in range(j + 1):
            for gamma in _multi_indices(n, g):
                fac = (-1j) ** g / math.prod(math.factorial(k) for k in gamma)
                for k in range(j - g + 1):
                    l = j - g - k
                    ta = A.component(k)
                    tb = B.component(l)
                    if not ta or not tb:
                        continue
                    da = dxi_terms(ta, gamma)
                    db = dx_terms(tb, gamma)
                    for a in da:
                        for b in db:
                            terms.append(a.times(b).scaled(fac))
        comps.append(terms)
    exact = A.exact and B.exact and A.is_differential() and B.is_differential() and J >= A.depth + B.depth
    return ClassicalSymbol(A.order + B.order, n, comps, exact=exact, lengths=A.lengths or B.lengths)


# --------------------------------------------------------------------------
# cut-off functions and full symbols


@dataclass(frozen=True)
class CutoffProfile:
    r"""Radial cut-off :math:`\psi`, zero inside ``r0`` and one outside ``r1``.

    The transition is the polynomial smoothstep of the given order, which is
    :math:`C^{order}` at both junctions (order 2 gives ``6u^5 - 15u^4 + 10u^3``).
    """

    inner_radius: float = 0.5
    outer_radius: float = 1.0
    smoothness: int = 2

    def __post_init__(self):
        if not (0 < self.inner_radius < self.outer_radius):
            raise ValueError("need 0 < inner_radius < outer_radius")
        if self.smoothness < 1:
            raise ValueError("smoothness must be at least 1")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        u = np.clip((r - self.inner_radius) / (self.outer_radius - self.inner_radius), 0.0, 1.0)
        N = self.smoothness
        poly = sum(special.comb(N + k, k) * special.comb(2 * N + 1, N - k) * (-u) ** k for k in range(N + 1))
        return u ** (N + 1) * poly

    def scaled(self, factor: float) -> "CutoffProfile":
        return CutoffProfile(self.inner_radius * factor, self.outer_radius * factor, self.smoothness)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(80)


def _transition_moment(psi: CutoffProfile, e):
    r""":math:`\int_{r_0}^{r_1}\psi(r) r^{e-1}\,dr` by Gauss-Legendre on the smooth transition."""
    a, b = psi.inner_radius, psi.outer_radius
    # psi is piecewise polynomial with kinks only at r0, r1, so split once in the middle
    total = 0.0
    edges = np.linspace(a, b, 3)
    for lo, hi in zip(edges[:-1], edges[1:]):
        r = 0.5 * (hi - lo) * _GL_X + 0.5 * (hi + lo)
        total = total + 0.5 * (hi - lo) * np.sum(_GL_W * psi(r) * r ** (complex(e) - 1))
    return total


@dataclass(frozen=True)
class BracketSymbol:
    r"""Full symbol :math:`\sum c\,\xi^m(\mu^2+|\xi|^2)^{\beta/2}`.

    Its classical expansion is the binomial series

    .. math:: \xi^m(\mu^2+|\xi|^2)^{\beta/2} \sim \sum_k \binom{\beta/2}{k}
              \mu^{2k}\,\xi^m|\xi|^{\beta-2k},

    exact for ``|xi| > mu``.  Terms are ``(coeff, monomial, beta)``.
    """

    dimension: int
    terms: tuple
    mu: float = 1.0
    lengths: tuple | None = None

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        terms = tuple((_as_field(c), tuple(int(k) for k in m), float(b)) for c, m, b in self.terms)
        for _, m, _ in terms:
            if len(m) != self.dimension:
                raise ValueError(f"monomial {m} does not match dimension {self.dimension}")
        if not terms:
            raise ValueError("empty symbol")
        degs = [sum(m) + b for _, m, b in terms]
        if any(abs(d - degs[0]) > DEGREE_TOL for d in degs):
            raise ValueError(f"terms have different orders {degs}")
        object.__setattr__(self, "terms", terms)

    @property
    def order(self) -> float:
        _, m, b = self.terms[0]
        return sum(m) + b

    def evaluate(self, x, xi):
        xi = np.asarray(xi, dtype=float)
        r2 = float(xi @ xi)
        total = 0.0
        for c, m, b in self.terms:
            cv = c.at(x) if x is not None else c.values
            total = total + cv * np.prod(xi ** np.array(m)) * (self.mu**2 + r2) ** (b / 2)
        return total

    def classical(self, J: int) -> ClassicalSymbol:
        comps = [[] for _ in range(J + 1)]
        for c, m, b in self.terms:
            for k in range(J // 2 + 1):
                comps[2 * k].append(HomTerm(c * (special.binom(b / 2, k) * self.mu ** (2 * k)), m, b - 2 * k))
        return ClassicalSymbol(self.order, self.dimension, comps, lengths=self.lengths)

    def at_point(self, x) -> "BracketSymbol":
        terms = tuple((c.at(x) if x is not None else c.values, m, b) for c, m, b in self.terms)
        return BracketSymbol(self.dimension, terms, self.mu)


def _remainder_integral(sym: BracketSymbol, J: int, psi: CutoffProfile) -> float:
    r"""Integral over the whole fiber of ``sigma - sum_{j<=J} psi sigma_{alpha-j}``.

    Requires constant coefficients (call on ``sym.at_point``).  Radial
    quadrature is used up to ``R* = max(r1, 4 mu)``; beyond it the remainder
    equals the convergent tail of the binomial series and is summed in closed
    form.
    """
    n = sym.dimension
    mu = sym.mu
    r0, r1 = psi.inner_radius, psi.outer_radius
    Rs = max(r1, 4.0 * mu)
    total = 0.0
    for c, m, b in sym.terms:
        mom = sphere_moment(m, n)
        if not mom:
            continue
        p = sum(m) + n
        K = J // 2

        def f(r, inside):
            head = (mu**2 + r * r) ** (b / 2)
            if inside:
                return r ** (p - 1) * head
            tail = sum(special.binom(b / 2, k) * mu ** (2 * k) * r ** (b - 2 * k) for k in range(K + 1))
            return r ** (p - 1) * (head - psi(r) * tail)

        val = integrate.quad(f, 0.0, r0, args=(True,), epsabs=1e-14, epsrel=1e-12, limit=200)[0]
        val += integrate.quad(f, r0, r1, args=(False,), epsabs=1e-14, epsrel=1e-12, limit=200)[0]
        if Rs > r1:
            val += integrate.quad(f, r1, Rs, args=(False,), epsabs=1e-14, epsrel=1e-12, limit=200)[0]
        # closed-form tail: sum_{k>K} binom mu^{2k} int_{Rs}^inf r^{p+b-2k-1} dr
        k = K + 1
        tail = 0.0
        while True:
            e = p + b - 2 * k
            if e >= 0:
                raise ValueError("remainder not integrable: increase the depth J")
            term = special.binom(b / 2, k) * mu ** (2 * k) * (-(Rs**e) / e)
            tail += term
            if abs(term) <= 1e-18 * max(1.0, abs(tail)) or k > K + 400:
                break
            k += 1
        total += complex(c.values) * mom * (val + tail)
    return _num(total)


@dataclass(frozen=True)
class CutoffResult:
    """Finite part ``c`` and log coefficient ``b`` of a cut-off integral."""

    c: complex | float
    b: complex | float
    cutoff_dependent: bool
    divergent: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "c": _encode(self.c),
            "b": _encode(self.b),
            "cutoff_dependent": self.cutoff_dependent,
            "divergent": [{"exponent": _encode(e), "a": _encode(a)} for e, a in sorted(self.divergent.items(), key=lambda kv: -complex(kv[0]).real)],
        }


def cutoff_integral(sigma, psi: CutoffProfile | None = None, x=None, *, depth: int | None = None,
                    b_tol: float = 1e-12) -> CutoffResult:
    r"""Cut-off integral :math:`\int\!\!\!\!-\ \sigma(x,\xi)\,d\xi` and its log coefficient.

    Parameters
    ----------
    sigma : ClassicalSymbol or BracketSymbol
        A ``ClassicalSymbol`` is read as the finite sum
        ``sum_j psi(xi) sigma_{alpha-j}``.  A ``BracketSymbol`` is a full
        symbol; its expansion is taken to ``depth`` and the remainder is
        integrated numerically over the whole fiber.
    psi : CutoffProfile, optional
        Cut-off used to glue the homogeneous pieces at the origin.
    x : point, optional
        Spatial point for grid coefficients.
    depth : int, optional
        Truncation depth for full symbols; defaults to the smallest depth
        with an integrable remainder.

    Returns
    -------
    CutoffResult
        ``c`` is the finite part, ``b`` the coefficient of ``log R``;
        ``divergent`` maps each nonzero exponent ``alpha - j + n`` to
        ``a_j = S_j / (alpha - j + n)`` with ``S_j`` the sphere integral of
        ``sigma_{alpha-j}``.  Results with ``b != 0`` are flagged as depending
        on the cut-off.

    Notes
    -----
    On a ball of radius ``R > r1`` one has
    :math:`\int_{|\xi|\le R}\psi\sigma_{\alpha-j} =
    \int_{r_0}^{r_1}\psi S_j r^{e-1}dr + S_j(R^e - r_1^e)/e`
    with ``e = alpha - j + n``, which is the source of every divergent term.
    """
    psi = CutoffProfile() if psi is None else psi
    n = sigma.dimension
    remainder = 0.0
    if isinstance(sigma, BracketSymbol):
        alpha = sigma.order
        if depth is None:
            depth = max(0, int(math.floor(alpha + n)) + 1)
        if alpha - (depth + 1) >= -n:
            raise ValueError(f"depth {depth} leaves a non-integrable remainder of order {alpha - depth - 1}")
        local = sigma.at_point(x)
        remainder = _remainder_integral(local, depth, psi)
        cls = local.classical(depth)
    elif isinstance(sigma, ClassicalSymbol):
        cls = sigma
        depth = sigma.depth
    else:
        raise TypeError(f"unsupported symbol type {type(sigma).__name__}")
    alpha = cls.order
    c_total = remainder
    b_total = 0.0
    divergent = {}
    r1 = psi.outer_radius
    for j in range(depth + 1):
        S = cls.sphere_integral(j)
        Sx = S.at(x) if (x is not None or S.is_constant) else None
        if Sx is None:
            raise ValueError("grid coefficients need a point x")
        if Sx == 0:
            continue
        e = complex(alpha) - j + n
        trans = _transition_moment(psi, e)
        if abs(e) <= DEGREE_TOL:
            b_total = b_total + Sx
            c_total = c_total + Sx * trans - Sx * math.log(r1)
        else:
            c_total = c_total + Sx * trans - Sx * r1**e / e
            divergent[_num(e)] = _num(Sx / e)
    c_total, b_total = _num(c_total), _num(b_total)
    return CutoffResult(c_total, b_total, abs(b_total) > b_tol, divergent)


# --------------------------------------------------------------------------
# brute-force oracle


@dataclass(frozen=True)
class BallFit:
    """Least-squares fit of ``R -> int_{|xi|<=R} sigma``."""

    exponents: tuple
    a: dict
    b: float
    c: float
    residual: float
    R_grid: tuple


def _mp_real(v):
    # decimal round trip keeps sums such as 2 + (-0.7) == 1.3 exact at high precision
    return mpmath.mpf(repr(float(v)))


def _mp_complex(v):
    v = complex(v)
    return mpmath.mpc(_mp_real(v.real), _mp_real(v.imag))


def _mp_exponents(sigma, min_exponent):
    """Distinct nonzero exponents of the ball-integral expansion, in mpmath."""
    n = sigma.dimension
    cands = []
    if isinstance(sigma, BracketSymbol):
        for c, m, b in sigma.terms:
            if not sphere_moment(m, n):
                continue
            k = 0
            while True:
                e = sum(m) + n + _mp_real(b) - 2 * k
                if e <= min_exponent:
                    break
                cands.append(e)
                k += 1
    else:
        alpha = _mp_complex(sigma.order)
        j = 0
        while (alpha - j + n).real > min_exponent:
            cands.append(alpha - j + n)
            j += 1
    exps = []
    for e in cands:
        if abs(e) > DEGREE_TOL and not any(abs(e - f) <= DEGREE_TOL for f in exps):
            exps.append(e)
    return exps


def _ball_values(sigma, x, R_grid, psi, dps):
    """Exact ball integrals at each radius, computed in mpmath."""
    n = sigma.dimension
    mp = mpmath.mp
    out = [mp.mpf(0)] * len(R_grid)
    if isinstance(sigma, BracketSymbol):
        local = sigma.at_point(x)
        mu = mp.mpf(local.mu)
        for c, m, b in local.terms:
            mom = sphere_moment(m, n)
            if not mom:
                continue
            p = sum(m) + n
            cv = mp.mpc(complex(c.values)) * mom
            for i, R in enumerate(R_grid):
                R = mp.mpf(R)
                B = _mp_real(b)
                val = mu**B * R**p / p * mp.hyp2f1(-B / 2, mp.mpf(p) / 2, mp.mpf(p) / 2 + 1, -(R / mu) ** 2)
                out[i] += cv * val
        return out
    r0, r1 = mp.mpf(psi.inner_radius), mp.mpf(psi.outer_radius)
    N = psi.smoothness

    def psi_mp(r):
        u = (r - r0) / (r1 - r0)
        return u ** (N + 1) * sum(mp.binomial(N + k, k) * mp.binomial(2 * N + 1, N - k) * (-u) ** k for k in range(N + 1))

    alpha = _mp_complex(sigma.order)
    for j in range(sigma.depth + 1):
        S = sigma.sphere_integral(j)
        Sx = S.at(x) if x is not None else S.values
        if Sx == 0:
            continue
        e = alpha - j + n
        trans = mp.quad(lambda r: psi_mp(r) * r ** (e - 1), [r0, (r0 + r1) / 2, r1])
        for i, R in enumerate(R_grid):
            R = mp.mpf(R)
            if abs(e) <= DEGREE_TOL:
                radial = mp.log(R / r1)
            else:
                radial = (R**e - r1**e) / e
            out[i] += mp.mpc(complex(Sx)) * (trans + radial)
    return out


def ball_integral_asymptotics(sigma, x=None, R_grid=None, *, psi: CutoffProfile | None = None,
                              min_exponent: float = -8.0, dps: int = 80) -> BallFit:
    r"""Fit :math:`\int_{|\xi|\le R}\sigma \sim \sum_j a_j R^{\alpha-j+n} + b\log R + c`.

    Ball integrals are evaluated to ``dps`` digits (exact radial integrals per
    homogeneous piece, adaptive quadrature across the cut-off transition, or
    the hypergeometric closed form for bracket symbols), then fitted in the
    basis of all exponents ``alpha - j + n > min_exponent`` together with
    ``log R`` and ``1``.  Exponents within ``1e-9`` of each other are merged
    and an exponent near zero is absorbed into the constant channel.

    Raises
    ------
    ValueError
        If ``R_grid`` has fewer than 8 radii or spans less than one decade.
    """
    psi = CutoffProfile() if psi is None else psi
    if R_grid is None:
        R0 = 50.0 * max(psi.outer_radius, getattr(sigma, "mu", 0.0) or 0.0, 1.0)
        R_grid = np.geomspace(R0, 100.0 * R0, 24)
    R_grid = np.asarray(R_grid, dtype=float)
    if R_grid.size < 8:
        raise ValueError("R_grid needs at least 8 radii")
    if R_grid.max() / R_grid.min() < 10.0 * (1 - 1e-12):
        raise ValueError("R_grid must span at least one decade")
    if np.any(R_grid <= psi.outer_radius):
        raise ValueError("all radii must lie outside the cut-off transition")
    mp = mpmath.mp
    with mpmath.workdps(dps):
        exps = _mp_exponents(sigma, min_exponent)
        vals = _ball_values(sigma, x, R_grid, psi, dps)
        rows = []
        for R in R_grid:
            R = mp.mpf(R)
            rows.append([R**e for e in exps] + [mp.log(R), mp.mpf(1)])
        A = mp.matrix(rows)
        y = mp.matrix(vals)
        # column scaling keeps the high-precision QR well balanced
        scales = [max(abs(A[i, k]) for i in range(A.rows)) for k in range(A.cols)]
        for k in range(A.cols):
            for i in range(A.rows):
                A[i, k] /= scales[k]
        coef = mp.qr_solve(A, y)[0]
        coef = [coef[k] / scales[k] for k in range(A.cols)]
        resid = max(
            abs(sum(rows[i][k] * coef[k] for k in range(len(coef))) - vals[i]) for i in range(len(vals))
        )
        a = {_num(complex(e)): _num(complex(coef[k])) for k, e in enumerate(exps)}
        return BallFit(
            exponents=tuple(_num(complex(e)) for e in exps),
            a=a,
            b=_num(complex(coef[-2])),
            c=_num(complex(coef[-1])),
            residual=float(resid),
            R_grid=tuple(float(r) for r in R_grid),
        )


# --------------------------------------------------------------------------
# residues


def residue_index(sigma: ClassicalSymbol):
    """Index ``j`` of the degree ``-n`` component, or ``None`` if non-integer."""
    e = complex(sigma.order) + sigma.dimension
    if abs(e.imag) > DEGREE_TOL or abs(e.real - round(e.real)) > DEGREE_TOL or round(e.real) < 0:
        return None
    return int(round(e.real))


def wodzicki_residue(A: ClassicalSymbol, density_only: bool = False, x=None, lengths=None):
    r"""Wodzicki residue density or global residue.

    The density is :math:`\mathrm{res}_x(A) = \int_{S^{n-1}}\sigma_{-n}(A)(x,\xi)\,d\xi`
    (a coordinate density); the global value is
    :math:`(2\pi)^{-n}\int \mathrm{res}_x(A)\,dx` over the period cell.

    Parameters
    ----------
    A : ClassicalSymbol
    density_only : bool
        Return the density (a ``CoefficientField``, or a scalar if ``x`` is
        given) instead of the global residue.
    x : point, optional
        Evaluate the density at ``x``.
    lengths : sequence of float, optional
        Period lengths for the global integral; defaults to ``A.lengths``.
    """
    n = A.dimension
    j = residue_index(A)
    if j is None or (j > A.depth and A.exact):
        dens = CoefficientField(0.0)
    elif j > A.depth:
        raise ValueError(f"symbol truncated at depth {A.depth}; the residue needs component {j}")
    else:
        dens = A.sphere_integral(j)
    if density_only:
        return dens.at(x) if x is not None else dens
    if x is not None:
        raise ValueError("x is only meaningful with density_only=True")
    lengths = lengths if lengths is not None else (dens.lengths if not dens.is_constant else A.lengths)
    if lengths is None:
        raise ValueError("global residue needs the period lengths of the chart")
    return _num(dens.integral(lengths) / (2 * np.pi) ** n)
