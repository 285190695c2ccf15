"""Closed-form kernels of the noninteracting electron gas and the weight
profiles used by the representability constructor.

The free gas at density ``t`` fills a momentum ball of radius ``k_F`` with
``k_F^2 = ((d+2)/d) * c_TF * t^(2/d)``; its real-space kernel is the Fourier
transform of that ball's indicator.  Shifting the ball by a vector ``u``
multiplies the kernel by ``exp(i u.z)`` and gives the gas a uniform current.

Two weight profiles enter the constructor: a Gaussian smearing of the local
drift velocity in momentum space (:class:`MomentumSmearing`) and a smooth
bump mixing over Fermi-sea densities (:class:`DensityWeight`).  Spin count is
fixed to 1 throughout; reports carry the spin reduction ``q^(-2/d)``
symbolically rather than numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import j1 as _bessel_j1

from .fields import Quadrature

__all__ = [
    "unit_ball_volume",
    "thomas_fermi_constant",
    "strain_constant",
    "fermi_radius",
    "FermiKernel",
    "ShiftedFermiKernel",
    "MomentumSmearing",
    "DensityWeight",
    "constants_report",
]

_SUPPORTED_DIMS = (1, 2, 3)


def _check_dim(d: int) -> None:
    if d not in _SUPPORTED_DIMS:
        raise ValueError(f"dimension must be one of {_SUPPORTED_DIMS}, got {d}")


def unit_ball_volume(d: int) -> float:
    _check_dim(d)
    return {1: 2.0, 2: math.pi, 3: 4.0 * math.pi / 3.0}[d]


def thomas_fermi_constant(d: int) -> float:
    """Kinetic prefactor of the free gas: c_TF = d/(d+2) * 4 pi^2 / |B_1|^(2/d)."""
    _check_dim(d)
    return d / (d + 2.0) * 4.0 * math.pi**2 / unit_ball_volume(d) ** (2.0 / d)


def strain_constant(d: int) -> float:
    """Constant C_d = 1 + d^3/4 multiplying the strain/vorticity integral."""
    _check_dim(d)
    return 1.0 + d**3 / 4.0


def fermi_radius(t: float, d: int) -> float:
    """Momentum-ball radius at gas density t (spin count 1)."""
    _check_dim(d)
    if t < 0:
        raise ValueError("density must be nonnegative")
    return math.sqrt((d + 2.0) / d * thomas_fermi_constant(d)) * t ** (1.0 / d)


def _shape_function(d: int, x: np.ndarray) -> np.ndarray:
    """Normalized kernel profile s_d(k_F r) with s_d(0) = 1."""
    x = np.asarray(x, dtype=float)
    small = x < 1e-2
    xs = np.where(small, x, 0.0)
    xb = np.where(small, 1.0, x)
    if d == 1:
        series = 1.0 - xs**2 / 6.0 + xs**4 / 120.0
        full = np.sin(xb) / xb
    elif d == 2:
        series = 1.0 - xs**2 / 8.0 + xs**4 / 192.0
        full = 2.0 * _bessel_j1(xb) / xb
    else:
        series = 1.0 - xs**2 / 10.0 + xs**4 / 280.0
        full = 3.0 * (np.sin(xb) - xb * np.cos(xb)) / xb**3
    return np.where(small, series, full)


def _shape_derivative(d: int, x: np.ndarray) -> np.ndarray:
    """d s_d / dx; series below x=1e-2 keeps the removable singularity exact."""
    x = np.asarray(x, dtype=float)
    small = x < 1e-2
    xs = np.where(small, x, 0.0)
    xb = np.where(small, 1.0, x)
    if d == 1:
        series = -xs / 3.0 + xs**3 / 30.0
        full = np.cos(xb) / xb - np.sin(xb) / xb**2
    elif d == 2:
        series = -xs / 4.0 + xs**3 / 48.0
        # (2 J1(x)/x)' = -2 J2(x)/x; use J2 = 2 J1/x - J0
        from scipy.special import j0 as _bessel_j0

        full = -2.0 * (2.0 * _bessel_j1(xb) / xb - _bessel_j0(xb)) / xb
    else:
        series = -xs / 5.0 + xs**3 / 70.0
        full = 3.0 * ((xb**2 - 3.0) * np.sin(xb) + 3.0 * xb * np.cos(xb)) / xb**4
    return np.where(small, series, full)


@dataclass(frozen=True)
class FermiKernel:
    """Ground-state kernel of the free gas at uniform density ``t``."""

    density: float
    dim: int = 3

    def __post_init__(self):
        _check_dim(self.dim)
        if self.density < 0:
            raise ValueError("density must be nonnegative")

    @property
    def k_fermi(self) -> float:
        return fermi_radius(self.density, self.dim)

    def value_radial(self, r) -> np.ndarray:
        """Kernel at separation radius r; value at r=0 equals the density."""
        r = np.asarray(r, dtype=float)
        return self.density * _shape_function(self.dim, self.k_fermi * r)

    def value(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return self.value_radial(np.linalg.norm(z, axis=-1))

    def gradient(self, z) -> np.ndarray:
        """Spatial gradient of the kernel; zero at z=0."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        r = np.linalg.norm(z, axis=-1)
        kf = self.k_fermi
        mag = self.density * kf * _shape_derivative(self.dim, kf * r)
        rsafe = np.where(r == 0.0, 1.0, r)
        return np.where(r[..., None] == 0.0, 0.0, mag[..., None] * z / rsafe[..., None])

    def diagonal_kinetic_density(self) -> float:
        """Kinetic energy density of the gas: c_TF * t^(1+2/d)."""
        return thomas_fermi_constant(self.dim) * self.density ** (1.0 + 2.0 / self.dim)


@dataclass(frozen=True)
class ShiftedFermiKernel:
    """Free-gas kernel with the momentum ball translated by ``shift``."""

    base: FermiKernel
    shift: tuple[float, ...]

    def __post_init__(self):
        if len(self.shift) != self.base.dim:
            raise ValueError("shift must match the kernel dimension")

    @property
    def density(self) -> float:
        return self.base.density

    @property
    def dim(self) -> int:
        return self.base.dim

    def value(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        phase = np.exp(1j * z @ np.asarray(self.shift))
        return phase * self.base.value(z)

    def observables(self) -> tuple[float, np.ndarray, float]:
        """(density, current, kinetic density) of the shifted gas.

        The current is ``t * u`` and the kinetic density picks up the drift
        term ``t |u|^2`` on top of the resting-gas value.
        """
        t = self.density
        u = np.asarray(self.shift, dtype=float)
        kin = t * float(u @ u) + self.base.diagonal_kinetic_density()
        return t, t * u, kin


@dataclass(frozen=True)
class MomentumSmearing:
    """Isotropic Gaussian momentum profile with second moment ``width``.

    Normalized as (2 pi w / d)^(-d/2) exp(-(d / 2w) |u|^2); its per-axis
    variance is w/d so the full second moment is exactly w.
    """

    width: float
    dim: int = 3

    def __post_init__(self):
        _check_dim(self.dim)
        if self.width <= 0:
            raise ValueError("width must be positive")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.width / self.dim)

    def value(self, u) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        norm = (2.0 * math.pi * self.width / self.dim) ** (-self.dim / 2.0)
        return norm * np.exp(-self.dim / (2.0 * self.width) * np.sum(u**2, axis=-1))

    def fisher_cap(self) -> float:
        """Upper bound d^3/(4w) that the localization integral must respect."""
        return self.dim**3 / (4.0 * self.width)

    def moments(self, order: int = 20) -> dict[str, float]:
        """Mass, mean, second moment and the localization integral
        int |grad theta|^2 / (4 theta), all by Gauss-Hermite quadrature."""
        q = Quadrature.gaussian(order, np.zeros(self.dim), self.sigma)
        nodes = q.nodes.reshape(-1, self.dim)
        r2 = np.sum(nodes**2, axis=-1)
        w = q.weights
        mass = float(np.sum(w))
        mean = np.sum(w[:, None] * nodes, axis=0)
        second = float(np.sum(w * r2))
        # |grad theta|^2/(4 theta) = (d/2w)^2 |u|^2 theta(u)
        fisher = (self.dim / (2.0 * self.width)) ** 2 * float(np.sum(w * r2))
        return {
            "mass": mass,
            "mean_norm": float(np.linalg.norm(mean)),
            "second_moment": second,
            "fisher_integral": fisher,
        }


@lru_cache(maxsize=64)
def _bump_tables(a: float, b: float) -> dict:
    """High-order Gauss-Legendre moments of the normalized bump on [a, b]."""
    x, w = np.polynomial.legendre.leggauss(320)
    t = 0.5 * (b - a) * x + 0.5 * (a + b)
    w = 0.5 * (b - a) * w
    s = (2.0 * t - (a + b)) / (b - a)
    raw = np.exp(-1.0 / (1.0 - s**2))
    norm = float(np.sum(w * raw))
    e = raw / norm
    dsdt = 2.0 / (b - a)
    logder = -2.0 * s / (1.0 - s**2) ** 2 * dsdt
    de = e * logder
    return {
        "norm": norm,
        "mass": float(np.sum(w * e)),
        "inv_moment": float(np.sum(w * e / t)),
        "ibp_moment": float(np.sum(w * t * de)),
        # eta'^2/eta written as eta * (log eta)'^2 to dodge 0/0 underflow
        "weiz_factor": float(np.sum(w * t**2 * e * logder**2)),
        "tf_factor": {d: float(np.sum(w * e * t ** (2.0 / d))) for d in _SUPPORTED_DIMS},
    }


@dataclass(frozen=True)
class DensityWeight:
    """Smooth compactly supported probability weight over density ratios.

    The profile is the standard bump exp(-1/(1-s^2)) rescaled to
    ``support=[a, b]`` and normalized to unit mass.  Supports starting at
    a >= 1 make the inverse moment automatically admissible (<= 1), which is
    what keeps the constructed operator below 1.
    """

    support: tuple[float, float] = (1.0, 2.0)

    def __post_init__(self):
        a, b = self.support
        if not (0.0 < a < b):
            raise ValueError("support must satisfy 0 < a < b")
        if self._tables()["inv_moment"] > 1.0 + 1e-12:
            raise ValueError(
                f"inadmissible weight: int eta(t)/t dt = "
                f"{self._tables()['inv_moment']:.6f} exceeds 1"
            )

    def _tables(self) -> dict:
        return _bump_tables(float(self.support[0]), float(self.support[1]))

    @classmethod
    def bump(cls, support: tuple[float, float] = (1.0, 2.0)) -> "DensityWeight":
        return cls(tuple(float(s) for s in support))

    @classmethod
    def narrowed(cls, eps: float) -> "DensityWeight":
        """Weight concentrated on [1, 1+eps]; tightens the kinetic prefactor
        at the price of a larger gradient factor."""
        if eps <= 0:
            raise ValueError("eps must be positive")
        return cls((1.0, 1.0 + float(eps)))

    def value(self, t) -> np.ndarray:
        a, b = self.support
        t = np.asarray(t, dtype=float)
        s = (2.0 * t - (a + b)) / (b - a)
        out = np.zeros_like(s)
        m = np.abs(s) < 1.0
        out[m] = np.exp(-1.0 / (1.0 - s[m] ** 2)) / self._tables()["norm"]
        return out

    def derivative(self, t) -> np.ndarray:
        a, b = self.support
        t = np.asarray(t, dtype=float)
        s = (2.0 * t - (a + b)) / (b - a)
        out = np.zeros_like(s)
        m = np.abs(s) < 1.0
        e = np.exp(-1.0 / (1.0 - s[m] ** 2)) / self._tables()["norm"]
        out[m] = e * (-2.0 * s[m] / (1.0 - s[m] ** 2) ** 2) * (2.0 / (b - a))
        return out

    def weiz_integrand(self, t) -> np.ndarray:
        """t^2 eta'(t)^2 / eta(t), written as eta * (t log-derivative)^2 so the
        endpoint underflow of the bump never produces 0/0."""
        a, b = self.support
        t = np.asarray(t, dtype=float)
        s = (2.0 * t - (a + b)) / (b - a)
        out = np.zeros_like(s)
        m = np.abs(s) < 1.0
        e = np.exp(-1.0 / (1.0 - s[m] ** 2)) / self._tables()["norm"]
        logder = -2.0 * s[m] / (1.0 - s[m] ** 2) ** 2 * (2.0 / (b - a))
        out[m] = t[m] ** 2 * e * logder**2
        return out

    @property
    def mass(self) -> float:
        return self._tables()["mass"]

    @property
    def inv_moment(self) -> float:
        """int eta(t)/t dt; must not exceed 1 for an admissible weight."""
        return self._tables()["inv_moment"]

    @property
    def ibp_moment(self) -> float:
        """int t eta'(t) dt; equals -mass by integration by parts."""
        return self._tables()["ibp_moment"]

    @property
    def weiz_factor(self) -> float:
        """int t^2 eta'(t)^2 / eta(t) dt, the gradient-term prefactor."""
        return self._tables()["weiz_factor"]

    def tf_factor(self, d: int = 3) -> float:
        """int eta(s) s^(2/d) ds, the realized kinetic prefactor."""
        _check_dim(d)
        return self._tables()["tf_factor"][d]

    @property
    def eps(self) -> float:
        """Support width above its lower end; the tightness knob."""
        return self.support[1] - self.support[0]


def constants_report(d: int = 3, weight: DensityWeight | None = None,
                     smearing_width: float = 1.0) -> str:
    """Structured `key = value` dump of the module constants and moments."""
    weight = weight or DensityWeight.bump()
    smear = MomentumSmearing(smearing_width, d)
    mom = smear.moments()
    lines = [
        f"dim = {d}",
        f"unit_ball_volume = {unit_ball_volume(d):.17g}",
        f"thomas_fermi_constant = {thomas_fermi_constant(d):.17g}",
        f"strain_constant = {strain_constant(d):.17g}",
        "spin_factor = q^(-2/d) with q = 1",
        f"weight_support = [{weight.support[0]:.17g}, {weight.support[1]:.17g}]",
        f"weight_mass = {weight.mass:.17g}",
        f"weight_inv_moment = {weight.inv_moment:.17g}",
        f"weight_tf_factor = {weight.tf_factor(d):.17g}",
        f"weight_weiz_factor = {weight.weiz_factor:.17g}",
        f"weight_ibp_moment = {weight.ibp_moment:.17g}",
        f"smearing_width = {smearing_width:.17g}",
        f"smearing_mass = {mom['mass']:.17g}",
        f"smearing_second_moment = {mom['second_moment']:.17g}",
        f"smearing_fisher_integral = {mom['fisher_integral']:.17g}",
        f"smearing_fisher_cap = {smear.fisher_cap():.17g}",
    ]
    return "\n".join(lines) + "\n"
