"""Flat torus lattices, spectral complex Hessians and pointwise Kähler algebra.

The torus is ``C^n / (2 pi Z)^{2n}`` with real coordinates ``x_k + i y_k``.  In
``reduced`` mode fields depend on the ``x`` coordinates only, so the complex
Hessian ``d_k dbar_l phi`` is a quarter of the real Hessian.  In ``full`` mode
all ``2n`` real directions are resolved.

Volume forms are represented by determinants: ``chi^n / n!`` is identified
with ``det(chi)`` times the flat lattice measure.  Every functional built on
top of this is either a ratio or a flow-invariant quantity, so the constant
relating the two conventions never matters.
"""

from dataclasses import dataclass
from functools import cached_property
from math import comb, factorial

import numpy as np
import scipy.fft as sfft

from . import kernels
from .errors import DomainError, PositivityLost

REDUCED = "reduced"
FULL = "full"
MAX_SITES = 2**24


@dataclass(frozen=True)
class LatticeGrid:
    """Uniform periodic lattice with ``N`` points per real direction."""

    n: int
    N: int
    mode: str = REDUCED

    def __post_init__(self):
        if self.mode not in (REDUCED, FULL):
            raise DomainError(f"mode must be {REDUCED!r} or {FULL!r}, got {self.mode!r}")
        if not 1 <= self.n <= 4:
            raise DomainError(f"complex dimension must be in 1..4, got {self.n}")
        if self.N < 4 or self.N % 2:
            raise DomainError(f"N must be even and >= 4, got {self.N}")
        if self.N**self.d > MAX_SITES:
            raise DomainError(f"{self.N}^{self.d} sites exceeds the 2^24 limit")

    @property
    def d(self):
        return self.n if self.mode == REDUCED else 2 * self.n

    @property
    def shape(self):
        return (self.N,) * self.d

    @property
    def size(self):
        return self.N**self.d

    @property
    def spacing(self):
        return 2 * np.pi / self.N

    @property
    def cell_volume(self):
        return self.spacing**self.d

    @property
    def volume(self):
        return (2 * np.pi) ** self.d

    @property
    def axes(self):
        return tuple(range(-self.d, 0))

    @cached_property
    def coords(self):
        """Tuple of ``d`` coordinate arrays (``ij`` indexing); ``x`` axes first."""
        x = np.arange(self.N) * self.spacing
        return tuple(np.meshgrid(*([x] * self.d), indexing="ij"))

    @cached_property
    def _wavenumbers(self):
        # (first-derivative k with Nyquist removed, k for pure second derivatives)
        full = np.fft.fftfreq(self.N, 1.0 / self.N)
        half = np.fft.rfftfreq(self.N, 1.0 / self.N)
        out = []
        for ax in range(self.d):
            k = half if ax == self.d - 1 else full
            k1 = np.where(np.abs(k) == self.N // 2, 0.0, k)
            shp = [1] * self.d
            shp[ax] = k.size
            out.append((k1.reshape(shp), k.reshape(shp)))
        return out

    @cached_property
    def spectral_shape(self):
        return (self.N,) * (self.d - 1) + (self.N // 2 + 1,)

    def _second(self, p, q):
        kp1, kp = self._wavenumbers[p]
        kq1, _ = self._wavenumbers[q]
        if p == q:
            return -(kp * kp) * np.ones(self.spectral_shape)
        return -(kp1 * kq1) * np.ones(self.spectral_shape)

    @cached_property
    def hessian_multipliers(self):
        """Real Fourier multipliers ``(re, im)`` of shape ``(n, n) + spectral_shape``.

        ``d_k dbar_l f`` has transform ``(re[k, l] + 1j * im[k, l]) * f_hat``.
        """
        n = self.n
        re = np.zeros((n, n) + self.spectral_shape)
        im = np.zeros_like(re)
        for k in range(n):
            for l in range(n):
                if self.mode == REDUCED:
                    re[k, l] = 0.25 * self._second(k, l)
                else:
                    re[k, l] = 0.25 * (self._second(k, l) + self._second(n + k, n + l))
                    if k != l:
                        im[k, l] = 0.25 * (self._second(k, n + l) - self._second(n + k, l))
        return re, im

    def integrate(self, density):
        """Rectangle rule; exact for trigonometric polynomials below Nyquist."""
        return float(np.sum(density)) * self.cell_volume

    def mean(self, values):
        return float(np.mean(values))

    def fft(self, f):
        return sfft.rfftn(f, axes=self.axes)

    def ifft(self, f_hat):
        return sfft.irfftn(f_hat, s=self.shape, axes=self.axes)


@dataclass(frozen=True)
class BackgroundForm:
    """Constant positive definite Hermitian matrix (a flat Kähler form)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix))
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DomainError(f"background form must be square, got shape {m.shape}")
        if np.iscomplexobj(m) and not np.any(m.imag):
            m = m.real
        m = m.astype(np.complex128 if np.iscomplexobj(m) else np.float64)
        if not np.array_equal(m, m.conj().T):
            raise DomainError("background form is not Hermitian")
        if not np.all(np.isfinite(m)):
            raise DomainError("background form has non-finite entries")
        lam = np.linalg.eigvalsh(m)[0]
        if not lam > 0:
            raise PositivityLost(f"background form is not positive definite (min eig {lam:.6g})", lam)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def of(cls, value):
        return value if isinstance(value, cls) else cls(np.asarray(value))

    @property
    def n(self):
        return self.matrix.shape[0]

    @property
    def min_eig(self):
        return float(np.linalg.eigvalsh(self.matrix)[0])

    def __eq__(self, other):
        return isinstance(other, BackgroundForm) and np.array_equal(self.matrix, other.matrix)

    def __hash__(self):
        return hash(self.matrix.tobytes())


@dataclass(frozen=True, eq=False)
class HermitianField:
    """One ``n x n`` Hermitian matrix per lattice site, shape ``grid.shape + (n, n)``."""

    matrices: np.ndarray

    @property
    def n(self):
        return self.matrices.shape[-1]

    @property
    def flat(self):
        return self.matrices.reshape(-1, self.n, self.n)

    @cached_property
    def min_eig(self):
        return float(np.min(kernels.min_eig(self.flat)))

    @property
    def kahler_valid(self):
        return self.min_eig > 0

    def det(self):
        return np.linalg.det(self.flat).real.reshape(self.matrices.shape[:-2])


def complex_hessian(phi, grid):
    """Spectral ``d_k dbar_l phi`` as a :class:`HermitianField`."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != grid.shape:
        raise DomainError(f"field shape {phi.shape} does not match grid {grid.shape}")
    return HermitianField(hessian_from_spectrum(grid.fft(phi), grid))


def hessian_from_spectrum(phi_hat, grid):
    """Complex Hessian array from an ``rfftn`` spectrum."""
    n = grid.n
    re_m, im_m = grid.hessian_multipliers
    iu = np.triu_indices(n)
    entries = grid.ifft(re_m[iu] * phi_hat[None])
    entries = np.moveaxis(entries, 0, -1)
    if grid.mode == FULL:
        off = iu[0] != iu[1]
        imag = grid.ifft(im_m[iu][off] * phi_hat[None])
        out = np.zeros(grid.shape + (n, n), dtype=np.complex128)
        vals = entries.astype(np.complex128)
        vals[..., off] += 1j * np.moveaxis(imag, 0, -1)
    else:
        out = np.zeros(grid.shape + (n, n))
        vals = entries
    out[..., iu[0], iu[1]] = vals
    out[..., iu[1], iu[0]] = np.conj(vals)
    return out


def assemble_chi(chi0, hess, check=True):
    """``chi0 + hess`` pointwise; raises :class:`PositivityLost` unless positive everywhere."""
    chi0 = BackgroundForm.of(chi0)
    h = hess.matrices if isinstance(hess, HermitianField) else np.asarray(hess)
    if h.shape[-1] != chi0.n:
        raise DomainError(f"dimension mismatch: chi0 is {chi0.n}x{chi0.n}, hessian {h.shape[-2:]}")
    chi = HermitianField(h + chi0.matrix)
    if check and not chi.kahler_valid:
        raise PositivityLost(f"chi lost positivity (min eig {chi.min_eig:.6g})", chi.min_eig)
    return chi


def sigma_and_det(chi, g):
    """Pointwise ``(1/n) tr(chi^{-1} g)`` and ``det chi`` on the grid shape."""
    g = BackgroundForm.of(g)
    mats = chi.matrices if isinstance(chi, HermitianField) else np.asarray(chi)
    shape = mats.shape[:-2]
    sigma, det = kernels.sigma_det(mats.reshape(-1, g.n, g.n), g.matrix)
    if not np.all(det > 0):
        raise PositivityLost("chi is not positive definite at some site", float(np.min(det)))
    return sigma.reshape(shape), det.reshape(shape)


def sigma_field(chi, g):
    """Wedge ratio ``omega ^ chi^{n-1} / chi^n = (1/n) tr(chi^{-1} g)`` at every site."""
    return sigma_and_det(chi, g)[0]


def wedge_ratio_oracle(chi, g, n=None):
    """``(1/n) d/ds log det(chi + s g)`` at ``s = 0`` by a 7-point central difference.

    Independent of the trace formula; meant for tests only.
    """
    chi = np.atleast_2d(np.asarray(chi))
    g = np.atleast_2d(np.asarray(g))
    n = chi.shape[0] if n is None else n
    # Step scaled so that every relative eigenvalue times h stays below 1e-2.
    h = 1e-2 * np.linalg.eigvalsh(chi)[0] / np.linalg.eigvalsh(g)[-1]
    coef = {1: 45.0, 2: -9.0, 3: 1.0}
    acc = 0.0
    for j, cj in coef.items():
        acc += cj * (np.linalg.slogdet(chi + j * h * g)[1] - np.linalg.slogdet(chi - j * h * g)[1])
    return acc / (60.0 * h) / n


def integrate_density(f, weight, grid):
    """``sum f * det(weight) * cell volume``; ``weight=None`` is the flat measure."""
    f = np.broadcast_to(np.asarray(f, dtype=np.float64), grid.shape)
    if weight is None:
        return grid.integrate(f)
    if isinstance(weight, BackgroundForm):
        return grid.integrate(f) * float(np.linalg.det(weight.matrix).real)
    return grid.integrate(f * weight.det())


def mixed_densities(chi, chi0):
    """Pointwise ``n! D_k(chi, chi0)`` for ``k = 0..n`` (stacked on axis 0).

    ``D_k`` are the mixed discriminants, i.e. the Bernstein coefficients of
    ``det(t chi + (1 - t) chi0) = sum_k C(n,k) t^k (1-t)^{n-k} D_k``; with the
    ``det = chi^n / n!`` convention ``n! D_k`` is the density of
    ``chi^k ^ chi0^{n-k}``.
    """
    chi0 = BackgroundForm.of(chi0)
    a = chi.matrices if isinstance(chi, HermitianField) else np.asarray(chi)
    n = chi0.n
    b = chi0.matrix
    nodes = np.arange(n + 1) / n if n > 0 else np.zeros(1)
    vals = np.stack([np.linalg.det(t * a + (1 - t) * b).real for t in nodes])
    # Bernstein basis matrix at the nodes: B[j, k] = C(n,k) t_j^k (1-t_j)^{n-k}
    basis = np.array([[comb(n, k) * t**k * (1 - t) ** (n - k) for k in range(n + 1)] for t in nodes])
    coeffs = np.tensordot(np.linalg.inv(basis), vals, axes=(1, 0))
    return factorial(n) * coeffs


def constant_symbol(m, grid):
    """Fourier symbol of ``f -> (1/n) Re tr(m Hess f)`` for a constant matrix ``m``."""
    m = np.asarray(m)
    re_m, im_m = grid.hessian_multipliers
    # contraction uses m[l, k] against entry (k, l)
    mt = m.T
    sym = np.tensordot(mt.real, re_m, axes=([0, 1], [0, 1]))
    if np.iscomplexobj(m):
        sym -= np.tensordot(mt.imag, im_m, axes=([0, 1], [0, 1]))
    return sym / grid.n
