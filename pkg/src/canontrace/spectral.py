r"""Model geometries, model operators, heat traces and Mellin-continued zeta functions.

Geometries are a circle or a flat torus carrying a conformal factor
``g = e^{2 phi} * flat``.  Operators are realized either exactly (constant
``phi``: closed-form spectra and theta functions) or by dense Fourier
collocation matrices in a symmetrized form with the same spectrum:

* torus Laplacian, conformal gauge ``Delta_g = e^{-2 phi} Delta``:
  ``M = e^{-phi} Delta e^{-phi}``;
* circle Laplacian ``Delta_g = e^{-phi} D^* e^{-phi} D``:
  ``M = e^{-phi/2} D^T e^{-phi} D e^{-phi/2}`` on an odd grid (no Nyquist mode);
* twisted Dirac ``e^{-phi}(-i d/dx + 2 pi a / L)``:
  ``M = e^{-phi/2} F^H diag(2 pi (k + a) / L) F e^{-phi/2}``.

Multiplication operators commute with the similarity, so f-weighted traces
can be taken in the orthonormal eigenbasis of ``M``.  Zero modes are always
excluded from ``theta``; kernel weights are reported separately.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy import linalg, special

from .fields import CoefficientField
from .symbols import ClassicalSymbol, HomTerm

log = logging.getLogger(__name__)

FAMILIES = ("laplacian", "dirac_circle", "power")
MIN_MODES = 16

# eps_floor = FLOOR_FACTOR / lambda_Nyquist: calibrated so the dense heat trace
# changes by less than 1e-8 under N -> 2N (see tests/test_spectral.py)
FLOOR_FACTOR = {"laplacian": 25.0, "dirac_circle": 25.0}

_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


# --------------------------------------------------------------------------
# geometry


@dataclass(frozen=True)
class ModelGeometry:
    """Circle or flat torus with conformal factor ``phi``.

    Parameters
    ----------
    kind : {"circle", "torus"}
    lengths : tuple of float
        Period lengths (one for the circle, two for the torus).
    N : int
        Grid points per dimension.
    phi : CoefficientField
        Conformal factor; constants are allowed.
    """

    kind: str
    lengths: tuple
    N: int
    phi: CoefficientField = field(default_factory=lambda: CoefficientField(0.0))

    def __post_init__(self):
        if self.kind not in ("circle", "torus"):
            raise ValueError(f"unknown geometry kind {self.kind!r}")
        lengths = tuple(float(L) for L in self.lengths)
        if len(lengths) != (1 if self.kind == "circle" else 2):
            raise ValueError(f"{self.kind} needs {1 if self.kind == 'circle' else 2} lengths")
        if any(L <= 0 for L in lengths):
            raise ValueError("lengths must be positive")
        object.__setattr__(self, "lengths", lengths)
        phi = self.phi if isinstance(self.phi, CoefficientField) else CoefficientField(self.phi)
        if not phi.is_constant:
            if not phi.is_real:
                raise ValueError("conformal factor must be real")
            if phi.ndim != len(lengths) or not np.allclose(phi.lengths, lengths):
                raise ValueError("conformal factor grid does not match the geometry")
            if phi.shape[0] != self.N:
                phi = phi.resample(self.N)
            if np.ptp(phi.values) == 0:
                phi = CoefficientField(float(phi.values.flat[0]))
        object.__setattr__(self, "phi", phi)

    @classmethod
    def circle(cls, length=2 * np.pi, N=128, phi=0.0):
        return cls("circle", (length,), N, phi)

    @classmethod
    def torus(cls, lengths=(1.0, 1.0), N=32, phi=0.0):
        return cls("torus", tuple(lengths), N, phi)

    @property
    def dimension(self) -> int:
        return len(self.lengths)

    @property
    def is_flat(self) -> bool:
        """True when ``phi`` is constant (so the metric is flat)."""
        return self.phi.is_constant

    def field(self, f) -> CoefficientField:
        """Coerce ``f`` (scalar, array or field) onto this geometry's grid."""
        if isinstance(f, CoefficientField):
            if f.is_constant:
                return f
            return f.resample(self.N)
        arr = np.asarray(f)
        if arr.ndim == 0:
            return CoefficientField(float(arr))
        return CoefficientField(arr, self.lengths)

    def grid_values(self, f) -> np.ndarray:
        f = self.field(f)
        return np.broadcast_to(np.asarray(f.values, dtype=float), (self.N,) * self.dimension)

    def density(self) -> CoefficientField:
        """Riemannian volume density ``e^{n phi}`` with respect to ``dx``."""
        return self.phi.apply(lambda v: np.exp(self.dimension * v))

    def volume(self) -> float:
        return float(self.density().integral(self.lengths))

    def integral_g(self, f) -> float:
        """``int f dvol_g``."""
        return float((self.field(f) * self.density()).integral(self.lengths))

    def mean_g(self, f) -> float:
        return self.integral_g(f) / self.volume()

    def curvature(self) -> CoefficientField:
        r"""Gaussian curvature :math:`K = -e^{-2\phi}(\partial_1^2+\partial_2^2)\phi` (torus only)."""
        if self.kind != "torus":
            raise ValueError("curvature is defined for the torus")
        if self.phi.is_constant:
            return CoefficientField(0.0)
        lap = self.phi.derivative(0).derivative(0) + self.phi.derivative(1).derivative(1)
        return -(self.phi * -2.0).apply(np.exp) * lap

    def conformal(self, f, t: float = 1.0) -> "ModelGeometry":
        """Geometry of ``e^{2 t f} g``."""
        f = self.field(f)
        if f.is_constant and self.phi.is_constant:
            return ModelGeometry(self.kind, self.lengths, self.N, CoefficientField(self.phi.values + t * f.values))
        phi = self.phi + f * t
        if phi.is_constant:
            phi = CoefficientField(np.full((self.N,) * self.dimension, phi.values), self.lengths)
        return ModelGeometry(self.kind, self.lengths, self.N, phi)

    def to_json(self) -> dict:
        return {"kind": self.kind, "lengths": list(self.lengths), "N": self.N, "phi": self.phi.to_json()}


# --------------------------------------------------------------------------
# exact theta functions


def theta1(t, L):
    r""":math:`\sum_{k\in\mathbb{Z}} e^{-4\pi^2k^2t/L^2}` via the direct or the Poisson-dual sum."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = 4 * np.pi**2 * t / L**2
    out = np.empty_like(t)
    direct = x >= 1.0
    if np.any(direct):
        xd = x[direct]
        K = int(math.ceil(math.sqrt(45.0 / xd.min()))) + 1
        k = np.arange(1, K + 1)
        out[direct] = 1.0 + 2.0 * np.exp(-np.outer(xd, k**2)).sum(axis=1)
    if np.any(~direct):
        td = t[~direct]
        y = L**2 / (4 * td)
        M = int(math.ceil(math.sqrt(45.0 / y.min()))) + 1
        m = np.arange(1, M + 1)
        out[~direct] = L / np.sqrt(4 * np.pi * td) * (1.0 + 2.0 * np.exp(-np.outer(y, m**2)).sum(axis=1))
    return out


def theta1_remainder(t, L):
    r"""``theta1(t, L) - L / sqrt(4 pi t)``, computed without cancellation."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    y = L**2 / (4 * t)
    M = int(math.ceil(math.sqrt(45.0 / y.min()))) + 1
    m = np.arange(1, M + 1)
    return L / np.sqrt(4 * np.pi * t) * 2.0 * np.exp(-np.outer(y, m**2)).sum(axis=1)


def bernoulli_poly(n: int, a: float) -> float:
    B = special.bernoulli(n)
    return float(sum(special.comb(n, k) * B[k] * a ** (n - k) for k in range(n + 1)))


# --------------------------------------------------------------------------
# operators


@dataclass
class Spectrum:
    """Nonzero eigenvalues (sorted by modulus) and the kernel dimension."""

    eigenvalues: np.ndarray
    kernel_dim: int


@dataclass
class HeatModel:
    """Small-``t`` data used by the Mellin split.

    ``singular`` maps exponents ``e <= 0`` to coefficients of ``t^e``;
    ``regular`` maps ``e > 0`` to coefficients used only on ``[0, floor]``.
    """

    singular: dict
    regular: dict
    floor: float
    source: str


class ModelOperator:
    """Operator on a model geometry with an exact or dense realization.

    Use :func:`build_operator` to construct.
    """

    def __init__(self, family, geometry, *, order, bidegree, kernel_dim, realization,
                 twist=None, power=None, base=None):
        self.family = family
        self.geometry = geometry
        self.order = float(order)
        self.dimension = geometry.dimension
        self.bidegree = tuple(bidegree)
        self.kernel_dim = int(kernel_dim)
        self.realization = realization
        self.twist = twist
        self.power = power
        self.base = base
        self.matrix = None
        self.eigenvalues = None
        self.eigenvectors = None
        self.eps_floor = 0.0
        self.cache_hit = False
        self._fits = {}

    # identity -----------------------------------------------------------
    def config(self) -> dict:
        out = {"family": self.family, "geometry": self.geometry.to_json(), "realization": self.realization}
        if self.twist is not None:
            out["twist"] = self.twist
        if self.power is not None:
            out["power"] = self.power
            out["base"] = self.base.config()
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.config(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    @property
    def is_exact(self) -> bool:
        return self.realization == "exact"

    @property
    def is_signed(self) -> bool:
        fam = self.base.family if self.family == "power" else self.family
        return fam == "dirac_circle"

    def __repr__(self):
        return (f"ModelOperator({self.family}, {self.geometry.kind}, N={self.geometry.N}, "
                f"{self.realization}, order={self.order})")

    # symbols ------------------------------------------------------------
    def symbol(self, J: int = 4) -> ClassicalSymbol:
        """Classical symbol in the flat chart (exact for differential families)."""
        g = self.geometry
        n = g.dimension
        if self.family == "power":
            from .powers import power_symbol

            return power_symbol(self.base.symbol(J), -self.power, J)
        phi = g.phi
        if self.family == "laplacian":
            w = (phi * -2.0).apply(np.exp)
            comps = [[HomTerm(w, (0,) * n, 2.0)]]
            if n == 1 and not phi.is_constant:
                comps.append([HomTerm(w * phi.derivative(0) * 1j, (1,), 0.0)])
            return ClassicalSymbol(2.0, n, comps, exact=True, lengths=g.lengths)
        if self.family == "dirac_circle":
            w = (phi * -1.0).apply(np.exp)
            shift = 2 * np.pi * self.twist / g.lengths[0]
            comps = [[HomTerm(w, (1,), 0.0)], [HomTerm(w * shift, (0,), 0.0)]]
            return ClassicalSymbol(1.0, 1, comps, exact=True, lengths=g.lengths)
        raise ValueError(f"no symbol for family {self.family}")

    # dense realization --------------------------------------------------
    def nyquist_eigenvalue(self) -> float:
        """Smallest Nyquist-mode eigenvalue over the conformal factor range."""
        g = self.geometry
        phimax = float(np.max(g.phi.values))
        kN = np.pi * g.N / min(g.lengths)
        if self.family == "laplacian":
            return kN**2 * math.exp(-2 * phimax)
        if self.family == "dirac_circle":
            return kN * math.exp(-phimax)
        raise ValueError("no Nyquist estimate for this family")

    def build_matrix(self) -> np.ndarray:
        g = self.geometry
        N = g.N
        phi = g.grid_values(g.phi)
        if self.family == "laplacian" and g.kind == "torus":
            L1, L2 = g.lengths
            k1 = 2 * np.pi * np.fft.fftfreq(N, d=L1 / N)
            k2 = 2 * np.pi * np.fft.fftfreq(N, d=L2 / N)
            # 1D second-derivative matrices; the 2D Laplacian is their Kronecker sum
            D1 = _fourier_matrix(k1**2)
            D2 = _fourier_matrix(k2**2)
            lap = np.kron(D1, np.eye(N)) + np.kron(np.eye(N), D2)
            e = np.exp(-phi).ravel()
            M = lap
            M *= e[:, None]
            M *= e[None, :]
            return M
        if self.family == "laplacian" and g.kind == "circle":
            L = g.lengths[0]
            k = 2 * np.pi * np.fft.fftfreq(N, d=L / N)
            D = _fourier_matrix(1j * k)
            e = np.exp(-phi / 2)
            B = np.exp(-phi / 2)[:, None] * D * e[None, :]
            return B.T @ B
        if self.family == "dirac_circle":
            L = g.lengths[0]
            kk = np.fft.fftfreq(N, d=1.0 / N)
            lam = 2 * np.pi * (kk + self.twist) / L
            F = np.fft.fft(np.eye(N), axis=0) / np.sqrt(N)
            H = F.conj().T @ (lam[:, None] * F)
            e = np.exp(-phi / 2)
            H = e[:, None] * H * e[None, :]
            return 0.5 * (H + H.conj().T)
        raise ValueError(f"no dense realization for {self.family} on {g.kind}")

    def solve(self, vectors: bool = True, cache=None):
        """Eigendecomposition of the dense realization (cached)."""
        if self.realization != "dense":
            raise ValueError("exact operators have no matrix")
        if self.eigenvalues is not None and (self.eigenvectors is not None or not vectors):
            return
        if self.family == "power":
            self.base.solve(vectors=vectors, cache=cache)
            ev = self.base.eigenvalues
            self.eigenvalues = np.sign(ev) * np.abs(ev) ** self.power
            self.eigenvectors = self.base.eigenvectors
            self.cache_hit = self.base.cache_hit
            return
        if cache is not None:
            got = cache.load(self, vectors=vectors)
            if got is not None:
                self.eigenvalues, self.eigenvectors = got
                self.cache_hit = True
                return
        M = self.build_matrix()
        if vectors:
            w, V = linalg.eigh(M, overwrite_a=True, check_finite=False)
        else:
            w = linalg.eigh(M, eigvals_only=True, overwrite_a=True, check_finite=False)
            V = None
        order = np.argsort(np.abs(w), kind="stable")
        self.eigenvalues = w[order]
        self.eigenvectors = None if V is None else V[:, order]
        if cache is not None:
            cache.store(self)

    def densities(self, weight) -> np.ndarray:
        """``sum_x f(x) |v_k(x)|^2`` for every eigenvector (grid order)."""
        if self.eigenvectors is None:
            self.solve(vectors=True)
        f = self.geometry.grid_values(weight).ravel()
        V = self.eigenvectors
        return np.einsum("i,ik->k", f, (V.conj() * V).real) if np.iscomplexobj(V) else f @ (V * V)

    # spectra ------------------------------------------------------------
    def spectrum(self, count: int | None = None) -> Spectrum:
        """Nonzero eigenvalues sorted by modulus.

        Exact operators enumerate the first ``count`` (default 200) values.
        """
        if self.realization == "dense":
            self.solve(vectors=False)
            return Spectrum(self.eigenvalues[self.kernel_dim:].copy(), self.kernel_dim)
        count = 200 if count is None else count
        return Spectrum(self.enumerate(count), self.kernel_dim)

    def _scale(self) -> float:
        c = float(self.geometry.phi.values)
        fam = self.base.family if self.family == "power" else self.family
        return math.exp(-2 * c) if fam == "laplacian" else math.exp(-c)

    def enumerate(self, count: int) -> np.ndarray:
        """First ``count`` nonzero eigenvalues of an exact operator, by modulus."""
        if self.family == "power":
            ev = self.base.enumerate(count)
            return np.sign(ev) * np.abs(ev) ** self.power
        g = self.geometry
        s = self._scale()
        if self.family == "laplacian" and g.kind == "circle":
            k = np.arange(1, count // 2 + 2)
            ev = np.repeat((2 * np.pi * k / g.lengths[0]) ** 2, 2)
            return s * ev[:count]
        if self.family == "laplacian":
            L1, L2 = g.lengths
            R = 4
            while True:
                p = np.arange(-R, R + 1)
                ev = 4 * np.pi**2 * ((p[:, None] / L1) ** 2 + (p[None, :] / L2) ** 2).ravel()
                ev = np.sort(ev[ev > 0])
                bound = 4 * np.pi**2 * (R / max(L1, L2)) ** 2
                if ev.size >= count and ev[count - 1] < bound:
                    return s * ev[:count]
                R *= 2
        if self.family == "dirac_circle":
            K = count
            k = np.arange(-K, K)
            ev = 2 * np.pi * (k + self.twist) / g.lengths[0]
            ev = ev[np.argsort(np.abs(ev), kind="stable")]
            return s * ev[:count]
        raise ValueError(self.family)


def _fourier_matrix(mult) -> np.ndarray:
    """Dense matrix of the Fourier multiplier ``mult`` (real part)."""
    N = mult.size
    F = np.fft.fft(np.eye(N), axis=0)
    M = np.fft.ifft(mult[:, None] * F, axis=0)
    return M.real


def build_operator(family: str, geometry: ModelGeometry, N: int | None = None, *, twist: float = 0.25,
                   base: ModelOperator | None = None, power: float | None = None,
                   realization: str | None = None) -> ModelOperator:
    """Construct a model operator.

    Parameters
    ----------
    family : {"laplacian", "dirac_circle", "power"}
    geometry : ModelGeometry
    N : int, optional
        Modes per dimension (defaults to the geometry grid).
    twist : float
        Twist ``a`` in ``(0, 1)`` for the Dirac family.
    base, power : for the power family, ``base ** power``.
    realization : {"exact", "dense"}, optional
        Forces a realization; the default is exact for constant ``phi``.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    if N is not None and N != geometry.N:
        geometry = ModelGeometry(geometry.kind, geometry.lengths, N, geometry.phi)
    if geometry.N < MIN_MODES:
        raise ValueError(f"N={geometry.N} is below the minimum of {MIN_MODES} modes per dimension")
    if family == "power":
        if base is None or power is None:
            raise ValueError("power family needs base and power")
        if power == 0:
            raise ValueError("power must be nonzero")
        op = ModelOperator("power", base.geometry, order=base.order * power, bidegree=base.bidegree,
                           kernel_dim=base.kernel_dim, realization=base.realization, power=float(power), base=base)
        op.eps_floor = base.eps_floor
        return op
    if realization is None:
        realization = "exact" if geometry.is_flat else "dense"
    if realization not in ("exact", "dense"):
        raise ValueError(f"unknown realization {realization!r}")
    if realization == "exact" and not geometry.is_flat:
        raise ValueError("exact spectra need a constant conformal factor")
    if family == "laplacian":
        bideg = (0.0, 2.0) if geometry.kind == "torus" else (None, None)
        op = ModelOperator("laplacian", geometry, order=2.0, bidegree=bideg, kernel_dim=1, realization=realization)
    else:
        if geometry.kind != "circle":
            raise ValueError("dirac_circle lives on the circle")
        if not (0.0 < twist < 1.0):
            raise ValueError("twist must lie in (0, 1)")
        op = ModelOperator("dirac_circle", geometry, order=1.0, bidegree=(0.0, 1.0), kernel_dim=0,
                           realization=realization, twist=float(twist))
    if realization == "dense":
        if geometry.kind == "circle" and family == "laplacian" and geometry.N % 2 == 0:
            # an even grid has a spurious Nyquist zero mode for first derivatives
            geometry = ModelGeometry(geometry.kind, geometry.lengths, geometry.N + 1, geometry.phi)
            op.geometry = geometry
        op.eps_floor = FLOOR_FACTOR[family] / op.nyquist_eigenvalue()
    return op


# --------------------------------------------------------------------------
# heat traces


def _weights(op: ModelOperator, weight, signed: bool):
    """Per-eigenvalue weights of the kernel-excluded dense trace and the kernel weight."""
    ev = op.eigenvalues
    kd = op.kernel_dim
    if weight is None:
        w = np.ones(ev.size)
    else:
        w = op.densities(weight)
    if signed:
        w = w * np.sign(ev)
    kernel = float(np.sum(w[:kd])) if kd else 0.0
    return ev[kd:], w[kd:], kernel


def heat_trace(op: ModelOperator, eps, weight=None, signed: bool = False, *, include_kernel: bool = False,
               cache=None):
    r"""Kernel-excluded heat trace :math:`\mathrm{Tr}'(f\,e^{-\varepsilon |A|})`.

    With ``signed=True`` the trace of :math:`A|A|^{-1}e^{-\varepsilon|A|}` is
    returned.  Dense operators refuse ``eps`` below their trust threshold.
    """
    eps_arr = np.atleast_1d(np.asarray(eps, dtype=float))
    if np.any(eps_arr <= 0):
        raise ValueError("eps must be positive")
    if op.realization == "dense" and eps_arr.min() < op.eps_floor * (1 - 1e-12):
        raise ValueError(f"eps={eps_arr.min():.3g} below the trust threshold {op.eps_floor:.3g} for N={op.geometry.N}")
    if op.realization == "dense":
        op.solve(vectors=weight is not None, cache=cache)
        lam, w, kernel = _weights(op, weight, signed)
        out = np.exp(-np.outer(eps_arr, np.abs(lam))) @ w
    else:
        out, kernel = _exact_theta(op, eps_arr, weight, signed)
    if include_kernel:
        out = out + kernel
    return out if np.ndim(eps) else float(out[0])


def _exact_weight(op, weight):
    if weight is None:
        return 1.0
    return op.geometry.mean_g(weight)


def _exact_theta(op: ModelOperator, t, weight, signed):
    g = op.geometry
    wf = _exact_weight(op, weight)
    if op.family == "power":
        return _power_theta(op, t, weight, signed)
    s = op._scale()
    if op.family == "laplacian":
        if signed:
            signed = False  # positive operator
        if g.kind == "circle":
            th = theta1(s * t, g.lengths[0]) - 1.0
        else:
            th = theta1(s * t, g.lengths[0]) * theta1(s * t, g.lengths[1]) - 1.0
        return wf * th, wf * op.kernel_dim
    if op.family == "dirac_circle":
        c0 = s * 2 * np.pi / g.lengths[0]
        a = op.twist
        x = c0 * t
        denom = -np.expm1(-x)
        if signed:
            th = (np.exp(-x * a) - np.exp(-x * (1 - a))) / denom
        else:
            th = (np.exp(-x * a) + np.exp(-x * (1 - a))) / denom
        return wf * th, 0.0
    raise ValueError(op.family)


def _power_theta(op, t, weight, signed):
    count = 20000 if op.dimension == 1 else 200000
    ev = op.base.enumerate(count)
    lam = np.abs(ev) ** op.power
    if np.max(np.exp(-t.min() * lam.max())) > 1e-16:
        raise ValueError("heat trace of this power is not resolved by enumeration at such small eps")
    w = np.sign(ev) if signed else np.ones_like(lam)
    wf = _exact_weight(op, weight)
    return wf * (np.exp(-np.outer(t, lam)) @ w), wf * op.kernel_dim


def exact_heat_model(op: ModelOperator, weight=None, signed=False, order: int = 8) -> HeatModel:
    """Closed-form small-``t`` expansion of an exact operator's theta function."""
    g = op.geometry
    wf = _exact_weight(op, weight)
    s = op._scale()
    if op.family == "laplacian":
        vol = g.volume()
        n = g.dimension
        # theta - S is O(exp(-L^2 / (4 t))) for t below floor
        floor = min(g.lengths) ** 2 * math.exp(-2 * float(g.phi.values)) / 200.0
        return HeatModel({-n / 2: wf * vol / (4 * np.pi) ** (n / 2), 0.0: -wf * op.kernel_dim}, {}, floor, "exact")
    if op.family == "dirac_circle":
        c0 = s * 2 * np.pi / g.lengths[0]
        a = op.twist
        sing, reg = {}, {}
        for nn in range(order + 1):
            Bn = bernoulli_poly(nn, a)
            coef = (((-1) ** nn - 1) if signed else ((-1) ** nn + 1)) * Bn / math.factorial(nn)
            if coef == 0:
                continue
            e = nn - 1
            val = wf * coef * c0**e
            (sing if e <= 0 else reg)[float(e)] = val
        floor = 0.05 / c0
        return HeatModel(sing, reg, floor, "exact")
    raise ValueError(f"no exact heat model for {op.family}")


# --------------------------------------------------------------------------
# heat-expansion fits


@dataclass
class HeatExpansionFit:
    """Fitted small-``eps`` expansion of a kernel-excluded heat trace.

    ``a[j]`` multiplies ``eps^((j - n)/alpha)``, ``b[k]`` multiplies
    ``eps^k log eps`` and ``c[l]`` multiplies ``eps^l`` (only for powers not
    already in the ``a`` family).  The ``eps^0`` entry of ``a`` is stored
    after kernel separation: ``a[n] = fitted eps^0 coefficient + kernel``,
    where ``kernel`` is ``dim ker`` (or the kernel weight ``mean_g f``).
    """

    a: dict
    b: dict
    c: dict
    residual: float
    eps_window: tuple
    exponents: dict
    kernel: float
    constant_fitted: float
    condition: float
    n: int
    alpha: float
    eps_grid: tuple = ()

    def to_json(self) -> dict:
        return {
            "a": {str(k): v for k, v in sorted(self.a.items())},
            "b": {str(k): v for k, v in sorted(self.b.items())},
            "c": {str(k): v for k, v in sorted(self.c.items())},
            "residual": self.residual,
            "eps_window": list(self.eps_window),
            "kernel": self.kernel,
            "constant_fitted": self.constant_fitted,
            "condition": self.condition,
        }

    def singular_part(self) -> dict:
        """Exponent -> coefficient for all fitted terms (kernel-excluded convention)."""
        return dict(self.exponents)

    def evaluate(self, eps):
        eps = np.asarray(eps, dtype=float)
        total = np.zeros_like(eps)
        for e, c in self.exponents.items():
            total = total + c * eps**e
        for k, c in self.b.items():
            total = total + c * eps**k * np.log(eps)
        return total


def default_window(op: ModelOperator):
    """Fit window ``[eps_min, eps_max]`` for an operator.

    The lower end is the trust threshold (dense) or a fixed small multiple of
    the length scale (exact); the upper end keeps non-perturbative terms
    (Laplacian) or the truncated Taylor tail (Dirac) below ~1e-10.
    """
    g = op.geometry
    if op.family == "power":
        raise ValueError("no default window for power operators")
    phimin = float(np.min(g.phi.values))
    phimax = float(np.max(g.phi.values))
    if op.family == "laplacian":
        Lg = min(g.lengths) * math.exp(phimin)
        hi = Lg**2 / 140.0
        lo = op.eps_floor if op.realization == "dense" else hi / 100.0
    else:
        # the expansion in x = 2 pi t / L_g converges for |x| < 2 pi
        c0 = 2 * np.pi * math.exp(-phimin) / g.lengths[0]
        hi = 1.5 / c0
        lo = max(op.eps_floor, 0.05 * math.exp(phimax - phimin) / c0)
    if hi < 3 * lo:
        raise ValueError(f"fit window [{lo:.3g}, {hi:.3g}] is too narrow: increase N")
    return lo, hi


def default_max_exponent(op: ModelOperator) -> float:
    # curvature of band-limited conformal factors is large on the unit
    # torus, so several higher heat coefficients are resolved in the window
    return 6.0


def heat_fit(op: ModelOperator, eps_grid=None, n: int | None = None, alpha: float | None = None, weight=None,
             *, signed: bool = False, max_exponent: float | None = None, log_powers=(), npoints: int = 24,
             cache=None, max_condition: float = 1e12, integer_steps: bool | None = None) -> HeatExpansionFit:
    r"""Least-squares fit of :math:`\mathrm{Tr}'(f e^{-\varepsilon A})` on a geometric grid.

    The basis is :math:`\{\varepsilon^{(j-n)/\alpha}\}_{j} \cup
    \{\varepsilon^k\log\varepsilon\}_{k\in\text{log\_powers}} \cup
    \{\varepsilon^\ell\}_{\ell\ge 1}` up to ``max_exponent``, with duplicate
    exponents merged; rows are weighted by ``1/|theta|`` (relative errors).

    With ``integer_steps`` (the default for Laplacians, which are
    differential on a closed manifold) only ``j`` with ``(j - n)/alpha`` an
    integer step from ``-n/alpha`` are kept: the other local coefficients
    vanish identically, and dropping them stabilizes the constant channel.

    Raises
    ------
    ValueError
        If the grid has fewer than 12 points, leaves the trust window, or the
        column-normalized design matrix has condition number above
        ``max_condition``.
    """
    n = op.dimension if n is None else n
    alpha = op.order if alpha is None else alpha
    if max_exponent is None:
        max_exponent = default_max_exponent(op)
    if eps_grid is None:
        lo, hi = default_window(op)
        eps_grid = np.geomspace(lo, hi, npoints)
    eps_grid = np.asarray(eps_grid, dtype=float)
    if eps_grid.size < 12:
        raise ValueError("heat_fit needs at least 12 eps values")
    ratios = eps_grid[1:] / eps_grid[:-1]
    if np.any(ratios <= 1) or np.ptp(np.log(ratios)) > 1e-6 * np.log(ratios).mean():
        raise ValueError("eps_grid must be increasing and geometrically spaced")
    theta = heat_trace(op, eps_grid, weight, signed, cache=cache)
    kernel = heat_trace(op, eps_grid[-1:], weight, signed, include_kernel=True, cache=cache)[0] - theta[-1]

    if integer_steps is None:
        integer_steps = op.family == "laplacian"
    a_exps = {}
    j = 0
    while (j - n) / alpha <= max_exponent + 1e-12:
        if not integer_steps or j % int(alpha) == 0:
            a_exps[j] = (j - n) / alpha
        j += 1
    # t^0 always carries the kernel; integer powers are only free for integer-step families
    extra = [0.0] + ([] if integer_steps and n % int(alpha) else [float(l) for l in range(1, int(max_exponent) + 1)])
    exps = []
    for e in list(a_exps.values()) + extra:
        if not any(abs(e - f) < 1e-9 for f in exps):
            exps.append(e)
    cols = [eps_grid**e for e in exps] + [eps_grid**k * np.log(eps_grid) for k in log_powers]
    A = np.stack(cols, axis=1)
    wrow = 1.0 / np.maximum(np.abs(theta), 1e-300)
    Aw = A * wrow[:, None]
    scale = np.linalg.norm(Aw, axis=0)
    cond = float(np.linalg.cond(Aw / scale))
    if cond > max_condition:
        raise ValueError(f"heat fit design matrix is ill-conditioned (cond={cond:.3g})")
    coef = np.linalg.lstsq(Aw / scale, theta * wrow, rcond=None)[0] / scale
    resid = float(np.max(np.abs(A @ coef - theta)))
    expo = {e: float(coef[i]) for i, e in enumerate(exps)}
    b = {k: float(coef[len(exps) + i]) for i, k in enumerate(log_powers)}
    a = {}
    for jj, e in a_exps.items():
        for f, c in expo.items():
            if abs(e - f) < 1e-9:
                a[jj] = c
    c = {l: expo[float(l)] for l in range(1, int(max_exponent) + 1)
         if float(l) in expo and not any(abs(l - e) < 1e-9 for e in a_exps.values())}
    const = expo.get(0.0, 0.0)
    # eps^0 sits at j = n in the a family
    a[n] = const + kernel
    return HeatExpansionFit(a=a, b=b, c=c, residual=resid, eps_window=(float(eps_grid[0]), float(eps_grid[-1])),
                            exponents=expo, kernel=float(kernel), constant_fitted=const, condition=cond,
                            n=n, alpha=alpha, eps_grid=tuple(eps_grid.tolist()))


def heat_model(op: ModelOperator, weight=None, signed=False, cache=None) -> HeatModel:
    """Small-``t`` model: closed form for exact operators, a fit otherwise."""
    if op.realization == "exact":
        return exact_heat_model(op, weight, signed)
    key = (None if weight is None else _field_key(op.geometry.field(weight)), signed)
    if key not in op._fits:
        op._fits[key] = heat_fit(op, weight=weight, signed=signed, cache=cache)
    fit = op._fits[key]
    sing = {e: c for e, c in fit.exponents.items() if e <= 1e-12}
    reg = {e: c for e, c in fit.exponents.items() if e > 1e-12}
    return HeatModel(sing, reg, fit.eps_window[0], "fit")


def _field_key(f: CoefficientField):
    if f.is_constant:
        return ("c", f.values)
    return ("g", hashlib.sha1(np.ascontiguousarray(f.values).tobytes()).hexdigest())


# --------------------------------------------------------------------------
# Mellin-continued zeta functions


def _panels(lo, hi, width):
    k = max(1, int(math.ceil((hi - lo) / width)))
    edges = np.linspace(lo, hi, k + 1)
    a, b = edges[:-1, None], edges[1:, None]
    x = (0.5 * (b - a) * _GL_X[None, :] + 0.5 * (a + b)).ravel()
    w = (0.5 * (b - a) * _GL_W[None, :]).ravel()
    return x, w


def _lowest(op):
    if op.realization == "dense" and op.family != "power":
        op.solve(vectors=False)
        return float(np.abs(op.eigenvalues[op.kernel_dim]))
    return float(abs(op.enumerate(1)[0]))


@dataclass
class MellinData:
    """Quadrature nodes and theta samples reused for many ``z``."""

    model: HeatModel
    t0: float
    lo_t: np.ndarray
    lo_w: np.ndarray
    lo_f: np.ndarray
    hi_t: np.ndarray
    hi_w: np.ndarray
    hi_f: np.ndarray


def mellin_data(op: ModelOperator, weight=None, signed=False, t0: float = 1.0, cache=None) -> MellinData:
    """Prepare the Mellin split at ``t0`` (see :func:`zeta`)."""
    model = heat_model(op, weight, signed, cache=cache)
    floor = model.floor
    if t0 <= floor:
        raise ValueError(f"t0={t0} must exceed the small-t floor {floor:.3g}")
    u, wu = _panels(math.log(floor), math.log(t0), 0.25)
    lo_t = np.exp(u)
    th = heat_trace(op, lo_t, weight, signed, cache=cache)
    S = sum(c * lo_t**e for e, c in model.singular.items())
    # dt/t = du, so the t^{z-1} dt measure becomes t^z du
    lo_f = (th - S)
    lam = _lowest(op)
    T = t0 + 60.0 / lam
    # linear panels of width ~1/lam resolve exp(-lam t)
    hi_t, hi_w = _panels(t0, T, min(1.0 / lam, (T - t0)))
    hi_f = heat_trace(op, hi_t, weight, signed, cache=cache)
    return MellinData(model, t0, lo_t, wu, lo_f, hi_t, hi_w, hi_f)


def _mellin_parts(md: MellinData, z, derivative: int):
    """``I_reg(z)`` (all but the t^0 singular term) and its z-derivative."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    m = md.model
    lt = np.log(md.lo_t)
    E_lo = np.exp(np.outer(z, lt))
    I = E_lo @ (md.lo_w * md.lo_f)
    dI = E_lo @ (md.lo_w * md.lo_f * lt)
    ht = md.hi_t
    E_hi = np.exp(np.outer(z - 1, np.log(ht)))
    I = I + E_hi @ (md.hi_w * md.hi_f)
    dI = dI + E_hi @ (md.hi_w * md.hi_f * np.log(ht))
    for e, c in m.regular.items():
        C = m.floor
        p = z + e
        I = I + c * C**p / p
        dI = dI + c * C**p * (math.log(C) / p - 1 / p**2)
    for e, c in m.singular.items():
        if abs(e) < 1e-12:
            continue
        p = z + e
        if np.any(np.abs(p) < 1e-10) and abs(c) > 1e-12:
            raise ValueError(f"z={-e} is a pole of the continuation")
        C = md.t0
        I = I + c * C**p / p
        dI = dI + c * C**p * (math.log(C) / p - 1 / p**2)
    return z, I, dI


def zeta_from_mellin(md: MellinData, z, derivative: int = 0):
    r"""Evaluate :math:`\zeta(z) = \Gamma(z)^{-1}\int_0^\infty t^{z-1}\theta(t)\,dt` (or its derivative)."""
    z, I, dI = _mellin_parts(md, z, derivative)
    a0 = sum(c for e, c in md.model.singular.items() if abs(e) < 1e-12)
    t0 = md.t0
    rg = special.rgamma(z)
    g1 = special.rgamma(z + 1)
    val0 = a0 * t0**z * g1
    if derivative == 0:
        return rg * I + val0
    small = np.abs(z) < 1e-12
    psi = special.psi(np.where(small, 1.0, z))
    drg = np.where(small, 1.0, -psi * rg)
    dval0 = val0 * (math.log(t0) - special.psi(z + 1))
    return drg * I + rg * dI + dval0


def _squeeze(z, out):
    out = np.asarray(out)
    if np.ndim(z) == 0:
        v = complex(out[0])
        return v.real if v.imag == 0 else v
    return out


def zeta(op: ModelOperator, z, *, weight=None, signed: bool = False, derivative: int = 0, t0: float = 1.0,
         cache=None):
    r"""Spectral zeta function :math:`\sum' w_k |\lambda_k|^{-z}` by Mellin continuation.

    ``weight`` gives the f-weighted version :math:`\mathrm{Tr}'(f|A|^{-z})`,
    ``signed`` the eta-type sum with ``sign(lambda_k)``.  Power operators
    ``B^s`` use :math:`\zeta_{B^s}(z) = \zeta_B(sz)`.

    Raises
    ------
    ValueError
        At poles of the continuation.
    """
    if op.family == "power":
        s = op.power
        zz = np.asarray(z, dtype=complex) * s
        out = zeta(op.base, zz, weight=weight, signed=signed, derivative=derivative, t0=t0, cache=cache)
        if derivative:
            out = np.asarray(out) * s
        return out if np.ndim(z) else (complex(out) if np.iscomplexobj(out) and complex(out).imag else float(np.real(out)))
    md = mellin_data(op, weight, signed, t0, cache=cache)
    return _squeeze(z, zeta_from_mellin(md, z, derivative))


def zeta0(op: ModelOperator, weight=None, cache=None) -> float:
    """``zeta(0)`` from the ``t^0`` coefficient (kernel excluded)."""
    return float(np.real(zeta(op, 0.0, weight=weight, cache=cache)))


def zeta_prime_at_0(op: ModelOperator, weight=None, t0: float = 1.0, cache=None) -> float:
    return float(np.real(zeta(op, 0.0, weight=weight, derivative=1, t0=t0, cache=cache)))


def eta0(op: ModelOperator, weight=None, t0: float = 1.0, cache=None) -> float:
    r""":math:`\eta(0)`, the value at zero of :math:`\sum \mathrm{sign}(\lambda)|\lambda|^{-z}`."""
    return float(np.real(zeta(op, 0.0, weight=weight, signed=True, t0=t0, cache=cache)))


def direct_zeta(op: ModelOperator, z, count: int = 200000, signed: bool = False) -> complex:
    """Truncated eigenvalue sum ``sum' |lambda|^{-z}`` (for large ``Re z``)."""
    if op.realization == "dense":
        ev = op.spectrum().eigenvalues
    else:
        ev = op.enumerate(count)
    w = np.sign(ev) if signed else 1.0
    return complex(np.sum(w * np.abs(ev) ** (-complex(z))))


def hurwitz_eta0(twist: float) -> float:
    """Twisted Dirac ``eta(0) = zeta_H(0, a) - zeta_H(0, 1 - a) = 1 - 2a``."""
    return float(mpmath.zeta(0, twist) - mpmath.zeta(0, 1 - twist))
