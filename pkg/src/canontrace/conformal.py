r"""Conformal families, covariance checks and finite-difference anomaly checks.

Geometries are varied along ``g_t = e^{2tf} g``; a functional is evaluated at
the nodes ``t = +-h`` (and ``+-2h`` for Richardson extrapolation) and the
central difference is compared with the anomaly formula for the pair
(functional, family).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import svds

from . import laurent, spectral
from .fields import CoefficientField
from .powers import power_symbol
from .symbols import wodzicki_residue

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CovariantFamily:
    """Conformally covariant family ``A_{e^{2f}g} = e^{-bf} A_g e^{af}``.

    ``exact`` families can be built on the model geometries; the others are
    recorded for their bidegrees only.
    """

    id: str
    bidegree: tuple
    order: float
    dimension: int | None
    exact: bool
    geometry_kind: str | None = None
    operator_family: str | None = None
    note: str = ""

    def build(self, geometry: spectral.ModelGeometry, **kw) -> spectral.ModelOperator:
        if not self.exact:
            raise ValueError(f"family {self.id!r} is registry-only: no operator construction")
        if geometry.kind != self.geometry_kind:
            raise ValueError(f"family {self.id!r} lives on the {self.geometry_kind}")
        return spectral.build_operator(self.operator_family, geometry, **kw)

    def to_json(self) -> dict:
        return {"id": self.id, "bidegree": list(self.bidegree), "order": self.order,
                "dimension": self.dimension, "exact": self.exact}


def _dim_family(id, num_a, num_b, order, note):
    return CovariantFamily(id, (num_a, num_b), order, None, False, note=note)


REGISTRY = {
    "laplacian_2d": CovariantFamily("laplacian_2d", (0.0, 2.0), 2.0, 2, True, "torus", "laplacian",
                                    "Laplace-Beltrami operator in dimension 2"),
    "dirac_circle": CovariantFamily("dirac_circle", (0.0, 1.0), 1.0, 1, True, "circle", "dirac_circle",
                                    "twisted Dirac operator, bidegree ((n-1)/2, (n+1)/2) at n = 1"),
    "yamabe": _dim_family("yamabe", "(n-2)/2", "(n+2)/2", 2.0, "conformal Laplacian, n >= 3"),
    "paneitz": _dim_family("paneitz", "(n-4)/2", "(n+4)/2", 4.0, "Paneitz operator"),
    "gjms": _dim_family("gjms", "(n-2k)/2", "(n+2k)/2", "2k", "GJMS operators P_k"),
    "dirac": _dim_family("dirac", "(n-1)/2", "(n+1)/2", 1.0, "Dirac operator, general n"),
}


def get_family(family) -> CovariantFamily:
    if isinstance(family, CovariantFamily):
        return family
    try:
        return REGISTRY[family]
    except KeyError:
        raise ValueError(f"unknown family {family!r}; known: {sorted(REGISTRY)}") from None


# --------------------------------------------------------------------------
# covariance


def _operator_matrix(fam: CovariantFamily, g: spectral.ModelGeometry, twist: float) -> np.ndarray:
    """Unsymmetrized matrix of ``A_g`` on the Fourier grid."""
    N = g.N
    phi = g.grid_values(g.phi).ravel()
    if fam.id == "laplacian_2d":
        L1, L2 = g.lengths
        k1 = 2 * np.pi * np.fft.fftfreq(N, d=L1 / N)
        k2 = 2 * np.pi * np.fft.fftfreq(N, d=L2 / N)
        D1 = spectral._fourier_matrix(k1**2)
        D2 = spectral._fourier_matrix(k2**2)
        lap = np.kron(D1, np.eye(N)) + np.kron(np.eye(N), D2)
        return np.exp(-2 * phi)[:, None] * lap
    if fam.id == "dirac_circle":
        L = g.lengths[0]
        kk = np.fft.fftfreq(N, d=1.0 / N)
        lam = 2 * np.pi * (kk + twist) / L
        F = np.fft.fft(np.eye(N), axis=0)
        D = np.fft.ifft(lam[:, None] * F, axis=0)
        return np.exp(-phi)[:, None] * D
    raise ValueError(f"no matrix for family {fam.id!r}")


def _opnorm(M: np.ndarray) -> float:
    if M.shape[0] <= 512:
        return float(np.linalg.norm(M, 2))
    return float(svds(M, k=1, return_singular_vectors=False, tol=1e-10)[0])


def covariance_residual(family, geometry: spectral.ModelGeometry, f, t: float = 1e-3, *,
                        twist: float = 0.25) -> float:
    r"""Relative residual of the infinitesimal covariance law.

    .. math::
        \frac{\|(A_{g_t}-A_{g_{-t}})/(2t) - ((a-b) f A_g - a[f, A_g])\|}{\|A_g\|}

    in the spectral (largest singular value) norm.
    """
    fam = get_family(family)
    if not fam.exact:
        raise ValueError(f"family {fam.id!r} is registry-only: no discretization to test")
    if geometry.kind != fam.geometry_kind:
        raise ValueError(f"family {fam.id!r} lives on the {fam.geometry_kind}")
    if not (1e-4 <= t <= 1e-2):
        raise ValueError("t must lie in [1e-4, 1e-2]")
    a, b = fam.bidegree
    fv = geometry.grid_values(f).ravel()
    A0 = _operator_matrix(fam, geometry, twist)
    if not np.any(fv):
        return 0.0
    Ap = _operator_matrix(fam, geometry.conformal(f, t), twist)
    Am = _operator_matrix(fam, geometry.conformal(f, -t), twist)
    pred = (a - b) * fv[:, None] * A0 - a * (fv[:, None] * A0 - A0 * fv[None, :])
    R = (Ap - Am) / (2 * t) - pred
    return _opnorm(R) / _opnorm(A0)


# --------------------------------------------------------------------------
# functionals


FUNCTIONAL_KINDS = ("res_hA", "zeta0", "zeta_prime0", "eta0", "weighted_tr_hA", "weighted_tr_hA_logj")


@dataclass(frozen=True)
class FunctionalSpec:
    """Spectral functional of ``A_g``.

    ``h`` is one of ``"one"``, ``"lambda"``, ``"power"`` (with exponent ``c``)
    or ``"sign"``; ``j`` is the log power for ``weighted_tr_hA_logj``.
    """

    kind: str
    h: str = "one"
    c: float = 1.0
    j: int = 0

    def __post_init__(self):
        if self.kind not in FUNCTIONAL_KINDS:
            raise ValueError(f"unknown functional {self.kind!r}; expected one of {FUNCTIONAL_KINDS}")
        if self.h not in ("one", "lambda", "power", "sign"):
            raise ValueError(f"unknown h {self.h!r}")

    @property
    def exponent(self) -> float:
        return {"one": 0.0, "lambda": 1.0, "power": self.c}.get(self.h, 0.0)

    def label(self) -> str:
        if self.kind in ("zeta0", "zeta_prime0", "eta0"):
            return self.kind
        hl = {"one": "1", "lambda": "A", "power": f"A^{self.c:g}", "sign": "A|A|^-1"}[self.h]
        if self.kind == "weighted_tr_hA_logj":
            return f"tr^A({hl} log^{self.j} A)"
        return f"res({hl})" if self.kind == "res_hA" else f"tr^A({hl})"

    def to_json(self) -> dict:
        return {"kind": self.kind, "h": self.h, "c": self.c, "j": self.j}


def _h_operand(spec: FunctionalSpec, op, f=None) -> laurent.Operand:
    if spec.h == "sign":
        if not op.is_signed:
            raise ValueError("h = sign requires an invertible signed family (twisted Dirac)")
        return laurent.Operand("sign", 0.0, f)
    return laurent.Operand("power", spec.exponent, f)


def evaluate_functional(spec: FunctionalSpec, family, geometry: spectral.ModelGeometry, *, twist: float = 0.25,
                        J: int = 4, cache=None):
    """Value of the functional at ``geometry`` (a float, or a density field for ``res_hA`` pointwise use)."""
    fam = get_family(family)
    op = fam.build(geometry, twist=twist) if fam.id == "dirac_circle" else fam.build(geometry)
    if spec.kind == "zeta0":
        return spectral.zeta0(op, cache=cache)
    if spec.kind == "zeta_prime0":
        return spectral.zeta_prime_at_0(op, cache=cache)
    if spec.kind == "eta0":
        if not op.is_signed:
            raise ValueError("eta0 requires a signed family (twisted Dirac)")
        return spectral.eta0(op, cache=cache)
    if spec.kind == "res_hA":
        return laurent.operand_residue(_h_operand(spec, op), op, J)
    if spec.kind == "weighted_tr_hA":
        return laurent.weighted_trace(_h_operand(spec, op), op, cache=cache)
    exp = laurent.laurent_TR(_h_operand(spec, op), op, K=max(spec.j, 1), cache=cache)
    fact = (-1) ** spec.j * float(np.prod(np.arange(1, spec.j + 1)))
    return float(np.real(exp.coefficient(spec.j))) * fact + (laurent.kernel_correction(_h_operand(spec, op), op)
                                                               if spec.j == 0 else 0.0)


def residue_density(c: float, family, geometry: spectral.ModelGeometry, J: int = 4) -> CoefficientField:
    r"""Coordinate residue density :math:`\mathrm{res}_x(A_g^c)` on the grid (no :math:`(2\pi)^{-n}`)."""
    fam = get_family(family)
    op = fam.build(geometry)
    sym = op.symbol(J) if c == 1 else power_symbol(op.symbol(J), -c, J)
    dens = wodzicki_residue(sym, density_only=True)
    if dens.is_constant:
        dens = CoefficientField(np.full((geometry.N,) * geometry.dimension, complex(dens.values).real),
                                geometry.lengths)
    return dens.real_part()


# --------------------------------------------------------------------------
# finite differences


@dataclass
class Variation:
    """Central-difference estimate of ``d/dt F(e^{2tf} g)`` at ``t = 0``."""

    value: float
    central: float
    step: float
    levels: int
    truncation_estimate: float
    nodes: dict = field(default_factory=dict)
    scheme: str = "central"


def _node(evaluate, geometry, f, t):
    try:
        return evaluate(geometry.conformal(f, t))
    except Exception as exc:
        raise RuntimeError(f"functional evaluation failed at conformal node t={t:+g}: {exc}") from exc


def finite_difference(evaluate, geometry: spectral.ModelGeometry, f, t: float = 1e-3, levels: int = 1) -> Variation:
    """Central difference of ``evaluate`` along ``e^{2tf} g`` with optional Richardson step.

    ``levels = 2`` combines steps ``t`` and ``2t`` to cancel the ``t^2`` term.
    """
    if levels not in (1, 2):
        raise ValueError("levels must be 1 or 2")
    nodes = {t: _node(evaluate, geometry, f, t), -t: _node(evaluate, geometry, f, -t)}
    d1 = (nodes[t] - nodes[-t]) / (2 * t)
    if levels == 1:
        return Variation(d1, d1, t, 1, float("nan"), nodes)
    nodes[2 * t] = _node(evaluate, geometry, f, 2 * t)
    nodes[-2 * t] = _node(evaluate, geometry, f, -2 * t)
    d2 = (nodes[2 * t] - nodes[-2 * t]) / (4 * t)
    rich = (4 * d1 - d2) / 3
    return Variation(rich, d1, t, 2, float(np.max(np.abs(d1 - rich))), nodes, "central+richardson")


def conformal_variation(spec: FunctionalSpec, family, geometry: spectral.ModelGeometry, f, t: float = 1e-3,
                        levels: int = 1, *, twist: float = 0.25, cache=None) -> Variation:
    """Finite-difference conformal variation of a scalar functional."""
    return finite_difference(lambda g: evaluate_functional(spec, family, g, twist=twist, cache=cache),
                             geometry, f, t, levels)


# --------------------------------------------------------------------------
# anomaly formulas


class UnsupportedPair(ValueError):
    """The (functional, family) pair has no implemented anomaly formula."""


def _weighted_zeta0(op, f, s=0.0, cache=None):
    """``fp_{z=0} Tr'(f A^{s} A^{-z})`` (kernel excluded)."""
    exp = laurent.laurent_TR(laurent.Operand.multiplier(f, s), op, K=1, cache=cache)
    return float(np.real(exp.finite_part))


def anomaly_rhs(spec: FunctionalSpec, family, geometry: spectral.ModelGeometry, f, *, twist: float = 0.25,
                J: int = 4, cache=None) -> float:
    r"""Anomaly formula for the supported (functional, family) pairs.

    * ``zeta0``, any family: 0.
    * ``zeta_prime0``, ``laplacian_2d``:
      :math:`(b-a)\,\zeta_f(0)` with
      :math:`\zeta_f(0) = \mathrm{tr}^A(f) - \mathrm{tr}(f\Pi) = \int f\,a_2\,d\mathrm{vol} - \mathrm{mean}_g f`.
    * ``eta0``, ``dirac_circle``: :math:`((b-a)/\alpha)\,\mathrm{res}(f A|A|^{-1})`.
    * ``res_hA`` with ``h = power(c)``: :math:`c(a-b)\,\mathrm{res}(f A^c)`.
    * ``weighted_tr_hA`` with ``h = lambda``, ``laplacian_2d``:
      :math:`(a-b)\mathrm{tr}^A(fA) + ((b-a)/\alpha)\mathrm{res}(fA)`.

    Raises
    ------
    UnsupportedPair
        Naming the missing ingredient for any other pair.
    """
    fam = get_family(family)
    if not fam.exact:
        raise UnsupportedPair(f"family {fam.id!r} is registry-only: no operator to evaluate the anomaly terms")
    a, b = fam.bidegree
    alpha = fam.order
    if spec.kind == "zeta0":
        return 0.0
    op = fam.build(geometry, twist=twist) if fam.id == "dirac_circle" else fam.build(geometry)
    if spec.kind == "zeta_prime0":
        if fam.id != "laplacian_2d":
            raise UnsupportedPair("zeta_prime0 anomaly needs the f-weighted heat coefficient route, "
                                  "implemented for laplacian_2d only")
        return (b - a) * _weighted_zeta0(op, f, cache=cache)
    if spec.kind == "eta0":
        if fam.id != "dirac_circle":
            raise UnsupportedPair("eta0 anomaly needs a signed family (dirac_circle)")
        res = laurent.operand_residue(laurent.Operand("sign", 0.0, f), op, J)
        return (b - a) / alpha * res
    if spec.kind == "res_hA":
        if spec.h not in ("power", "lambda", "one"):
            raise UnsupportedPair("res_hA anomaly is implemented for h = power(c)")
        c = spec.exponent
        if c == 0:
            return 0.0
        res = laurent.operand_residue(laurent.Operand("power", c, f), op, J)
        return c * (a - b) * res
    if spec.kind == "weighted_tr_hA":
        if not (spec.h == "lambda" and fam.id == "laplacian_2d"):
            raise UnsupportedPair("weighted_tr_hA anomaly is implemented for h = lambda on laplacian_2d only")
        # the ((b - a)/alpha) res(f A) term vanishes: f A is differential
        return (a - b) * _weighted_zeta0(op, f, s=1.0, cache=cache)
    raise UnsupportedPair(f"no anomaly formula for {spec.kind!r}: the log^j coefficient identities are not implemented")


@dataclass
class AnomalyReport:
    functional: FunctionalSpec
    family: str
    bidegree: tuple
    f_spec: object
    t: float
    scheme: str
    lhs: float
    rhs: float
    abs_gap: float
    rel_gap: float
    tolerance: float
    passed: bool
    truncation_estimate: float = float("nan")
    pointwise: bool = False

    def to_json(self) -> dict:
        return {
            "functional": self.functional.to_json() | {"label": self.functional.label(),
                                                      "pointwise": self.pointwise},
            "family": self.family,
            "bidegree": list(self.bidegree),
            "f_spec": self.f_spec,
            "t": self.t,
            "scheme": self.scheme,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "abs_gap": self.abs_gap,
            "rel_gap": self.rel_gap,
            "tolerance": self.tolerance,
            "truncation_estimate": None if np.isnan(self.truncation_estimate) else self.truncation_estimate,
            "pass": self.passed,
        }


def _report(spec, fam, f_spec, t, scheme, lhs, rhs, tol, trunc=float("nan"), pointwise=False):
    gap = abs(lhs - rhs)
    rel = gap / abs(rhs) if rhs != 0 else (0.0 if gap == 0 else float("inf"))
    return AnomalyReport(spec, fam.id, fam.bidegree, f_spec, t, scheme, float(lhs), float(rhs), float(gap),
                         float(rel), tol, bool(gap <= tol or rel <= tol), trunc, pointwise)


def anomaly_check(spec: FunctionalSpec, family, geometry: spectral.ModelGeometry, f, t: float = 1e-3,
                  tolerance: float = 1e-6, *, levels: int = 1, pointwise: bool = False, twist: float = 0.25,
                  f_spec=None, J: int = 4, cache=None) -> AnomalyReport:
    """Compare the finite-difference variation with the anomaly formula.

    With ``pointwise=True`` (``res_hA`` with ``h = power(c)`` only) the
    coordinate densities are compared on the grid:
    ``d/dt res_x(A^c)`` against ``c (a - b) f(x) res_x(A^c)`` in sup norm.
    """
    fam = get_family(family)
    if pointwise:
        if spec.kind != "res_hA":
            raise UnsupportedPair("pointwise checks are defined for residue densities only")
        c = spec.exponent
        a, b = fam.bidegree
        var = finite_difference(lambda g: residue_density(c, fam, g, J).values, geometry, f, t, levels)
        dens = residue_density(c, fam, geometry, J).values
        pred = c * (a - b) * geometry.grid_values(f) * dens
        gap = float(np.max(np.abs(var.value - pred)))
        scale = float(np.max(np.abs(pred)))
        rep = AnomalyReport(spec, fam.id, fam.bidegree, f_spec, t, var.scheme, float(np.max(np.abs(var.value))),
                            scale, gap, gap / scale if scale else float("inf"), tolerance, gap <= tolerance,
                            var.truncation_estimate, True)
        return rep
    rhs = anomaly_rhs(spec, fam, geometry, f, twist=twist, J=J, cache=cache)
    var = conformal_variation(spec, fam, geometry, f, t, levels, twist=twist, cache=cache)
    return _report(spec, fam, f_spec, t, var.scheme, var.value, rhs, tolerance, var.truncation_estimate)
