"""Spatial coefficient fields on periodic grids.

A field is either a constant or a sample of a smooth periodic function on a
uniform grid ``x_j = j * L / N`` (per dimension).  Derivatives, products and
point evaluation all go through the Fourier representation.
"""
from __future__ import annotations

import numbers

import numpy as np

CHOP_TOL = 4 * np.finfo(float).eps


def _clean_scalar(v):
    v = complex(v)
    if v.imag == 0.0:
        return float(v.real)
    return v


class CoefficientField:
    """Constant or periodic-grid coefficient ``c(x)``.

    Parameters
    ----------
    values : scalar or ndarray
        A scalar gives a constant field.  An array of shape ``(N,) * n``
        gives samples on the uniform periodic grid.
    lengths : sequence of float, optional
        Period lengths, required for grid fields.
    """

    __slots__ = ("values", "lengths")

    def __init__(self, values, lengths=None):
        arr = np.asarray(values)
        if arr.ndim == 0:
            self.values = _clean_scalar(arr[()])
            self.lengths = None if lengths is None else tuple(float(L) for L in lengths)
            return
        if lengths is None:
            raise ValueError("grid fields need period lengths")
        lengths = tuple(float(L) for L in lengths)
        if len(lengths) != arr.ndim:
            raise ValueError(f"lengths {lengths} do not match grid of ndim {arr.ndim}")
        if np.iscomplexobj(arr) and not np.any(arr.imag):
            arr = arr.real
        arr = np.array(arr, dtype=np.complex128 if np.iscomplexobj(arr) else np.float64)
        arr.flags.writeable = False
        self.values = arr
        self.lengths = lengths

    # construction -------------------------------------------------------
    @classmethod
    def constant(cls, value) -> "CoefficientField":
        return cls(value)

    @classmethod
    def from_function(cls, func, lengths, N) -> "CoefficientField":
        """Sample ``func(*coords)`` on the grid with ``N`` points per dimension."""
        axes = [np.arange(N) * (L / N) for L in lengths]
        mesh = np.meshgrid(*axes, indexing="ij")
        return cls(func(*mesh), lengths)

    # basic properties ---------------------------------------------------
    @property
    def is_constant(self) -> bool:
        return not isinstance(self.values, np.ndarray)

    @property
    def shape(self):
        return () if self.is_constant else self.values.shape

    @property
    def ndim(self) -> int:
        return 0 if self.is_constant else self.values.ndim

    @property
    def is_real(self) -> bool:
        if self.is_constant:
            return isinstance(self.values, float)
        return not np.iscomplexobj(self.values)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def is_zero(self, tol=0.0) -> bool:
        return self.max_abs() <= tol

    def array(self, shape=None):
        """Values broadcast to ``shape`` (defaults to the field's own shape)."""
        if self.is_constant:
            return np.full(shape or (), self.values)
        return self.values

    # arithmetic ---------------------------------------------------------
    def _grid_of(self, other):
        if self.is_constant:
            return other.lengths, other.shape
        if other.is_constant:
            return self.lengths, self.shape
        if self.shape != other.shape or not np.allclose(self.lengths, other.lengths):
            raise ValueError(
                f"incompatible grids: {self.shape}/{self.lengths} vs {other.shape}/{other.lengths}"
            )
        return self.lengths, self.shape

    def _binary(self, other, op):
        if isinstance(other, numbers.Number):
            other = CoefficientField(other)
        if not isinstance(other, CoefficientField):
            return NotImplemented
        if self.is_constant and other.is_constant:
            return CoefficientField(op(self.values, other.values))
        lengths, _ = self._grid_of(other)
        return CoefficientField(op(self.values, other.values), lengths)

    def __add__(self, other):
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(other, np.divide)

    def __neg__(self):
        return self.apply(np.negative)

    def apply(self, func) -> "CoefficientField":
        """Pointwise ``func`` (e.g. ``np.exp``) applied to the samples."""
        if self.is_constant:
            return CoefficientField(func(self.values))
        return CoefficientField(func(self.values), self.lengths)

    def conj(self) -> "CoefficientField":
        return self.apply(np.conj)

    def real_part(self) -> "CoefficientField":
        return self.apply(np.real)

    # calculus -----------------------------------------------------------
    def derivative(self, axis: int) -> "CoefficientField":
        """Spectral derivative along ``axis``; the Nyquist mode is dropped."""
        if self.is_constant:
            return CoefficientField(0.0)
        vals = self.values
        n = vals.shape[axis]
        L = self.lengths[axis]
        k = 2.0 * np.pi * np.fft.fftfreq(n, d=L / n)
        if n % 2 == 0:
            k[n // 2] = 0.0
        shape = [1] * vals.ndim
        shape[axis] = n
        spec = np.fft.fft(vals, axis=axis)
        # modes at the roundoff level carry no information; chopping them keeps
        # repeated differentiation from amplifying noise by k**order
        spec[np.abs(spec) < CHOP_TOL * np.max(np.abs(spec))] = 0.0
        out = np.fft.ifft(spec * (1j * k).reshape(shape), axis=axis)
        if not np.iscomplexobj(vals):
            out = out.real
        return CoefficientField(out, self.lengths)

    def integral(self, lengths=None) -> complex | float:
        """Integral over the period cell with respect to ``dx``."""
        lengths = self.lengths if lengths is None else tuple(lengths)
        if lengths is None:
            raise ValueError("integral of a constant field needs lengths")
        vol = float(np.prod(lengths))
        if self.is_constant:
            return _clean_scalar(self.values * vol)
        return _clean_scalar(np.mean(self.values) * vol)

    def mean(self):
        if self.is_constant:
            return self.values
        return _clean_scalar(np.mean(self.values))

    def at(self, x):
        """Value at a physical point by trigonometric interpolation."""
        if self.is_constant:
            return self.values
        x = np.atleast_1d(np.asarray(x, dtype=float))
        coeffs = np.fft.fftn(self.values) / self.values.size
        phase = np.ones(self.values.shape, dtype=complex)
        for axis, (n, L) in enumerate(zip(self.values.shape, self.lengths)):
            k = np.fft.fftfreq(n, d=1.0 / n)
            shape = [1] * self.values.ndim
            shape[axis] = n
            mode = np.exp(2j * np.pi * k * x[axis] / L)
            if n % 2 == 0:
                # symmetric split of the Nyquist mode keeps real data real
                mode[n // 2] = np.cos(np.pi * n * x[axis] / L)
            phase = phase * mode.reshape(shape)
        val = np.sum(coeffs * phase)
        if not np.iscomplexobj(self.values):
            return float(val.real)
        return complex(val)

    def resample(self, N: int) -> "CoefficientField":
        """Fourier resampling onto a grid with ``N`` points per dimension."""
        if self.is_constant or self.values.shape[0] == N:
            return self
        M = self.values.shape[0]
        spec = np.fft.fftn(self.values) / self.values.size
        kin = np.fft.fftfreq(M, d=1.0 / M).astype(int)
        kout = np.fft.fftfreq(N, d=1.0 / N).astype(int)
        kmax = min(M, N) // 2
        keep_in = [i for i, k in enumerate(kin) if abs(k) < kmax]
        out = np.zeros((N,) * self.values.ndim, dtype=complex)
        pos = {k: i for i, k in enumerate(kout)}
        idx_out = [pos[kin[i]] for i in keep_in]
        sl_in = np.ix_(*([keep_in] * self.values.ndim))
        sl_out = np.ix_(*([idx_out] * self.values.ndim))
        out[sl_out] = spec[sl_in]
        vals = np.fft.ifftn(out) * out.size
        if not np.iscomplexobj(self.values):
            vals = vals.real
        return CoefficientField(vals, self.lengths)

    # serialization ------------------------------------------------------
    def to_json(self) -> dict:
        if self.is_constant:
            return {"constant": _encode(self.values)}
        return {
            "grid": {
                "N": int(self.values.shape[0]),
                "lengths": list(self.lengths),
                "values": _encode(self.values.ravel()),
            }
        }

    @classmethod
    def from_json(cls, data: dict, dimension: int | None = None, lengths=None) -> "CoefficientField":
        if set(data) == {"constant"}:
            return cls(_decode(data["constant"]))
        if set(data) != {"grid"}:
            raise ValueError(f"coefficient must be {{constant}} or {{grid}}, got keys {sorted(data)}")
        grid = data["grid"]
        unknown = set(grid) - {"N", "lengths", "values"}
        if unknown:
            raise ValueError(f"unknown grid keys {sorted(unknown)}")
        N = int(grid["N"])
        vals = np.asarray(_decode(grid["values"]))
        ndim = dimension if dimension is not None else int(round(np.log(vals.size) / np.log(N)))
        lens = grid.get("lengths", lengths)
        if lens is None:
            lens = (2 * np.pi,) * ndim
        return cls(vals.reshape((N,) * ndim), lens)

    def __repr__(self):
        if self.is_constant:
            return f"CoefficientField({self.values!r})"
        return f"CoefficientField(grid{self.shape}, lengths={self.lengths})"


def _encode(v):
    if isinstance(v, np.ndarray):
        if np.iscomplexobj(v):
            return {"re": v.real.tolist(), "im": v.imag.tolist()}
        return v.tolist()
    v = complex(v)
    if v.imag:
        return {"re": v.real, "im": v.imag}
    return v.real


def _decode(v):
    if isinstance(v, dict):
        re = np.asarray(v["re"], dtype=float)
        im = np.asarray(v["im"], dtype=float)
        out = re + 1j * im
        return out if out.ndim else complex(out)
    if isinstance(v, list):
        return np.asarray(v, dtype=float)
    return float(v)


def random_modes(n: int, *, band: int = 2, amplitude: float = 0.2, seed: int = 0, lengths=None) -> list:
    """Seeded band-limited real Fourier modes with ``max |f| == amplitude``.

    Modes with ``0 < max|k_d| <= band`` get independent normal cos/sin
    amplitudes (no mean).  The peak is measured on a fixed reference grid,
    so the same seed gives the same function at every resolution.
    """
    rng = np.random.default_rng(seed)
    modes = []
    for k in np.ndindex(*((2 * band + 1,) * n)):
        k = tuple(int(v) - band for v in k)
        if not any(k) or k < tuple(-v for v in k):
            continue
        a, b = rng.standard_normal(2)
        modes.append({"k": list(k), "cos": float(a), "sin": float(b)})
    ref = fourier_field((1.0,) * n, max(64, 16 * band), modes)
    peak = ref.max_abs()
    scale = amplitude / peak if peak > 0 else 0.0
    for m in modes:
        m["cos"] *= scale
        m["sin"] *= scale
    return modes


def random_field(lengths, N: int, *, band: int = 2, amplitude: float = 0.2, seed: int = 0) -> CoefficientField:
    """Grid samples of :func:`random_modes` on the given periodic grid."""
    modes = random_modes(len(lengths), band=band, amplitude=amplitude, seed=seed)
    return fourier_field(lengths, N, modes)


def fourier_field(lengths, N: int, modes) -> CoefficientField:
    """Real field ``sum a cos(2 pi k.x/L) + b sin(2 pi k.x/L)`` from mode dicts.

    Each mode is ``{"k": [k1, ...], "cos": a, "sin": b}``; ``k = 0`` with
    ``cos`` sets a constant offset.
    """
    n = len(lengths)
    axes = [np.arange(N) * (L / N) for L in lengths]
    mesh = np.meshgrid(*axes, indexing="ij")
    vals = np.zeros((N,) * n)
    for mode in modes:
        unknown = set(mode) - {"k", "cos", "sin"}
        if unknown:
            raise ValueError(f"unknown mode keys {sorted(unknown)}")
        k = list(mode["k"])
        if len(k) != n:
            raise ValueError(f"mode {k} does not match dimension {n}")
        arg = sum(2 * np.pi * k[d] * mesh[d] / lengths[d] for d in range(n))
        vals += float(mode.get("cos", 0.0)) * np.cos(arg) + float(mode.get("sin", 0.0)) * np.sin(arg)
    return CoefficientField(vals, lengths)
