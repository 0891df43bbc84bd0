r"""Laurent expansions of :math:`z \mapsto \mathrm{TR}(A Q^{-z})` and weighted traces.

Operands ``A`` are restricted to operators diagonal in the eigenbasis of the
weight ``Q`` (powers of ``Q``, the sign unit ``Q|Q|^{-1}``) and to
multiplication operators times powers of ``Q``, whose traces reduce to
f-weighted heat traces.  The pole part comes from the symbol calculus
(``res(A)/q``); the regular part from Cauchy integrals of spectral samples.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import spectral
from .powers import power_symbol
from .symbols import ClassicalSymbol, symbol_product, wodzicki_residue

CAUCHY_POINTS = 64
CAUCHY_RADIUS = 0.1


@dataclass(frozen=True)
class Operand:
    """Trace operand ``A`` built from the weight ``Q``.

    ``kind`` is ``"power"`` (``f * Q^s``; ``s = 0`` and no ``f`` is the
    identity) or ``"sign"`` (``f * Q|Q|^{-1}``).
    """

    kind: str = "power"
    s: float = 0.0
    weight: object = None

    @classmethod
    def identity(cls):
        return cls("power", 0.0, None)

    @classmethod
    def power(cls, s: float):
        return cls("power", float(s), None)

    @classmethod
    def multiplier(cls, f, s: float = 0.0):
        return cls("power", float(s), f)

    @classmethod
    def sign(cls):
        return cls("sign", 0.0, None)

    def label(self) -> str:
        if self.kind == "sign":
            return "Q|Q|^-1"
        base = "I" if self.s == 0 else f"Q^{self.s:g}"
        return base if self.weight is None else f"f*{base}"


def _parse_operand(A) -> Operand:
    if isinstance(A, Operand):
        return A
    if A in (None, "I", "identity"):
        return Operand.identity()
    if A == "sign":
        return Operand.sign()
    raise ValueError(f"unsupported operand {A!r}: use Operand.identity/power/multiplier/sign")


def operand_symbol(A: Operand, Q: spectral.ModelOperator, J: int = 4) -> ClassicalSymbol:
    """Classical symbol of the operand (in the flat chart of ``Q``'s geometry)."""
    A = _parse_operand(A)
    g = Q.geometry
    n = g.dimension
    if A.kind == "sign":
        if not Q.is_signed:
            raise ValueError("the sign unit needs a signed (Dirac-type) weight")
        D = Q.symbol(J)
        D2 = symbol_product(D, D, J)
        sym = symbol_product(D, power_symbol(D2, 0.5, J), J)
    elif A.s == 0:
        sym = ClassicalSymbol.radial(0.0, n, 1.0, lengths=g.lengths, exact=True)
    else:
        sym = power_symbol(Q.symbol(J), -A.s, J)
    if A.weight is not None:
        f = g.field(A.weight)
        sym = symbol_product(ClassicalSymbol.multiplication(f, n, lengths=g.lengths), sym, J)
    return sym


def operand_residue(A: Operand, Q: spectral.ModelOperator, J: int = 4) -> float:
    """Wodzicki residue of the operand (exactly 0 for differential operands)."""
    A = _parse_operand(A)
    if A.kind == "power" and A.s == 0:
        return 0.0
    if A.kind == "power" and float(A.s * Q.order).is_integer() and A.s * Q.order >= 0 and Q.family == "laplacian":
        return 0.0
    res = wodzicki_residue(operand_symbol(A, Q, J), lengths=Q.geometry.lengths)
    return float(np.real(res))


def kernel_correction(A: Operand, Q: spectral.ModelOperator) -> float:
    r"""Finite-rank term :math:`\mathrm{tr}(A\Pi_Q)`.

    Negative powers act as zero on the kernel (they are taken on its
    orthogonal complement), so only ``s = 0`` operands see the kernel.
    """
    A = _parse_operand(A)
    if Q.kernel_dim == 0 or A.kind == "sign" or A.s != 0:
        return 0.0
    if A.weight is None:
        return float(Q.kernel_dim)
    return float(Q.kernel_dim * Q.geometry.mean_g(A.weight))


def sample_TR(A: Operand, Q: spectral.ModelOperator, z, cache=None):
    r"""Spectral values of :math:`\mathrm{TR}(AQ^{-z})` (kernel excluded) at an array of ``z``."""
    A = _parse_operand(A)
    z = np.asarray(z, dtype=complex)
    if A.kind == "sign":
        return np.asarray(spectral.zeta(Q, z, weight=A.weight, signed=True, cache=cache))
    # Q^s Q^{-z} = Q^{-(z - s)}; |Q|^s for a signed weight
    if A.s != 0 and Q.is_signed:
        raise ValueError("powers of a signed weight are not supported; use the sign operand")
    return np.asarray(spectral.zeta(Q, z - A.s, weight=A.weight, cache=cache))


@dataclass
class LaurentExpansion:
    """Truncated Laurent series ``sum_k coeffs[k] (z - z0)^k``."""

    pole_order: int
    coeffs: dict
    provenance: dict
    expansion_point: complex = 0.0
    radius: float = CAUCHY_RADIUS
    fitted: dict = field(default_factory=dict)

    def evaluate(self, z):
        z = np.asarray(z, dtype=complex) - self.expansion_point
        return sum(c * z**k for k, c in self.coeffs.items())

    def coefficient(self, k: int) -> float:
        return self.coeffs.get(k, 0.0)

    @property
    def finite_part(self) -> float:
        return self.coeffs.get(0, 0.0)

    def to_json(self) -> dict:
        def enc(v):
            v = complex(v)
            return v.real if abs(v.imag) <= 1e-14 * max(1.0, abs(v.real)) else {"re": v.real, "im": v.imag}

        return {
            "pole_order": self.pole_order,
            "expansion_point": enc(self.expansion_point),
            "coeffs": [{"k": k, "value": enc(self.coeffs[k]), "provenance": self.provenance[k]}
                       for k in sorted(self.coeffs)],
        }


def cauchy_coefficients(values, z, z0: complex, kmin: int, kmax: int) -> dict:
    """Trapezoidal Cauchy integrals on an equispaced circle around ``z0``."""
    w = np.asarray(z, dtype=complex) - z0
    return {k: complex(np.mean(values * w ** (-k))) for k in range(kmin, kmax + 1)}


def _real(v):
    v = complex(v)
    return v.real if abs(v.imag) <= 1e-9 * max(1.0, abs(v.real)) else v


def laurent_TR(A, Q: spectral.ModelOperator, K: int = 3, *, radius: float = CAUCHY_RADIUS,
               points: int = CAUCHY_POINTS, J: int = 4, cache=None) -> LaurentExpansion:
    r"""Laurent expansion of :math:`\mathrm{TR}(AQ^{-z})` at ``z = 0``.

    The ``z^{-1}`` coefficient is ``res(A)/q`` from the symbol calculus
    (provenance ``symbolic``).  Coefficients ``z^k``, ``0 <= k <= K``, are
    Cauchy integrals of the spectral samples with the symbolic pole removed
    (provenance ``hybrid`` when a pole was removed, else ``spectral``).  The
    raw spectral ``z^{-1}`` and ``z^{-2}`` coefficients are kept in ``fitted``.

    Raises
    ------
    ValueError
        For operands that are not diagonal with ``Q`` (and are not
        multiplication operators), or when the sampling circle meets a pole.
    """
    A = _parse_operand(A)
    q = Q.order
    res = operand_residue(A, Q, J)
    pole = res / q
    theta = 2 * np.pi * (np.arange(points) + 0.5) / points
    z = radius * np.exp(1j * theta)
    F = sample_TR(A, Q, z, cache=cache)
    raw = cauchy_coefficients(F, z, 0.0, -2, K)
    reg = cauchy_coefficients(F - pole / z, z, 0.0, 0, K)
    coeffs = {-1: pole} if pole != 0 else {}
    prov = {-1: "symbolic"} if pole != 0 else {}
    for k in range(0, K + 1):
        coeffs[k] = _real(reg[k])
        prov[k] = "hybrid" if pole != 0 else "spectral"
    return LaurentExpansion(1 if pole != 0 else 0, coeffs, prov, 0.0, radius,
                            fitted={"pole": _real(raw[-1]), "second_order": _real(raw[-2])})


def weighted_trace(A, Q: spectral.ModelOperator, *, cache=None, **kw) -> float:
    r"""Weighted trace :math:`\mathrm{tr}^Q(A) = \mathrm{fp}_{z=0}\mathrm{TR}(AQ^{-z}) + \mathrm{tr}(A\Pi_Q)`."""
    A = _parse_operand(A)
    exp = laurent_TR(A, Q, K=kw.pop("K", 1), cache=cache, **kw)
    return float(np.real(exp.finite_part)) + kernel_correction(A, Q)


@dataclass
class ConsistencyReport:
    """Symbolic ``res(A)/q`` against the spectrally fitted ``z^{-1}`` coefficient."""

    operand: str
    symbolic: float
    spectral: float
    gap: float
    second_order: float

    def to_json(self) -> dict:
        return {"operand": self.operand, "symbolic": self.symbolic, "spectral": self.spectral,
                "gap": self.gap, "second_order_pole": self.second_order}


def consistency_check(A, Q: spectral.ModelOperator, *, radius: float = CAUCHY_RADIUS, cache=None,
                      J: int = 4) -> ConsistencyReport:
    """Compare the residue from the symbol with the pole of the spectral samples."""
    A = _parse_operand(A)
    exp = laurent_TR(A, Q, K=1, radius=radius, cache=cache, J=J)
    sym = float(np.real(exp.coefficient(-1)))
    spec = float(np.real(exp.fitted["pole"]))
    return ConsistencyReport(A.label(), sym, spec, abs(sym - spec), float(abs(exp.fitted["second_order"])))
