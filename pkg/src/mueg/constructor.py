"""Explicit construction of a 1-RDM with prescribed density and current.

Given a density ``rho`` and a target velocity split ``v = grad g + w``, the
kernel is a weighted mixture of shifted free-gas kernels,

    gamma(x,y) = int int sqrt(theta(u - w(x)) eta(t/rho(x))) f_t^u(x - y)
                         sqrt(theta(u - w(y)) eta(t/rho(y))) dt/t du,

followed by the gauge twist exp(i(g(x) - g(y))) that converts the current
from rho*w to rho*(w + grad g).  The sandwiched square-root form keeps the
operator between 0 and 1; the mean-zero momentum profile theta reproduces
the current exactly and the unit-mass density weight eta reproduces rho.

Numerics: the t-integral is taken in the scaled variable t = sqrt(rho(x)
rho(y)) * s, which pins the quadrature interval to the weight's support,
keeps Hermiticity exact at the floating-point level, and makes the kernel a
smooth function of its endpoints (finite differences of the kernel then
converge cleanly).  The Gaussian u-integral is separable from t and is done
either in closed form or by matched Gauss-Hermite nodes.  A lattice
evaluation (`kernel_matrix`) keeps the explicit sandwich structure so the
sampled operator is positive semidefinite by construction, independent of
quadrature accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .fields import GridSpec, ScalarField, TensorField, VectorField, integration_weights
from .kernels import (
    DensityWeight,
    _shape_function,
    fermi_radius,
    strain_constant,
    thomas_fermi_constant,
)
from .rdm import GaugeFunction, Observables
from .report import BoundReport

__all__ = [
    "DegenerateInputError",
    "QuadratureDefect",
    "CurrentDecomposition",
    "ConstructorSpec",
    "ConstructedRdm",
    "build_rdm",
    "verify_marginals",
    "KineticBoundLedger",
    "kinetic_bound_ledger",
    "kinetic_upper_functional",
]


class DegenerateInputError(ValueError):
    """Density vanishes identically or inputs cannot support a build."""


class QuadratureDefect(RuntimeError):
    """Successive quadrature orders fail to converge on the marginals."""


# ---------------------------------------------------------------------------
# inputs
# ---------------------------------------------------------------------------


@dataclass
class CurrentDecomposition:
    """Velocity split v = grad g + w with an evaluable derivative of w."""

    g: GaugeFunction | None
    w: callable
    w_jacobian: callable | None = None

    def v(self, points: np.ndarray) -> np.ndarray:
        out = np.asarray(self.w(points), dtype=float)
        if self.g is not None:
            out = out + self.g.gradient(points)
        return out

    def w_values(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.w(points), dtype=float)

    def w_jac(self, points: np.ndarray, h: float = 1e-4) -> np.ndarray:
        if self.w_jacobian is not None:
            return np.asarray(self.w_jacobian(points), dtype=float)
        points = np.atleast_2d(points)
        d = points.shape[1]
        J = np.empty(points.shape[:1] + (d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = 1.0
            J[:, :, j] = (
                self.w_values(points - 2 * h * e)
                - 8.0 * self.w_values(points - h * e)
                + 8.0 * self.w_values(points + h * e)
                - self.w_values(points + 2 * h * e)
            ) / (12.0 * h)
        return J

    @classmethod
    def zero(cls, dim: int = 3) -> "CurrentDecomposition":
        z = np.zeros(dim)
        return cls(None, lambda p: np.zeros_like(np.atleast_2d(p)),
                   lambda p: np.zeros((np.atleast_2d(p).shape[0], dim, dim)))

    @classmethod
    def constant(cls, vec) -> "CurrentDecomposition":
        vec = np.asarray(vec, dtype=float)
        d = vec.size
        return cls(
            None,
            lambda p: np.broadcast_to(vec, np.atleast_2d(p).shape).copy(),
            lambda p: np.zeros((np.atleast_2d(p).shape[0], d, d)),
        )

    @classmethod
    def rigid_rotation(cls, nu0) -> "CurrentDecomposition":
        """Symmetric-gauge swirl w(x) = (1/2) nu0 x x; divergence-free with
        |Dw|_F = |nu0|/sqrt(2) everywhere and vanishing symmetric part."""
        nu0 = np.asarray(nu0, dtype=float)
        if nu0.size != 3:
            raise ValueError("rigid rotation needs a 3-vector")
        half_cross = 0.5 * np.array(
            [[0.0, -nu0[2], nu0[1]], [nu0[2], 0.0, -nu0[0]], [-nu0[1], nu0[0], 0.0]]
        )

        def w(p):
            return np.atleast_2d(p) @ half_cross.T

        def jac(p):
            return np.broadcast_to(half_cross, (np.atleast_2d(p).shape[0], 3, 3)).copy()

        return cls(None, w, jac)

    def with_gauge(self, g: GaugeFunction) -> "CurrentDecomposition":
        return CurrentDecomposition(g, self.w, self.w_jacobian)


@dataclass(frozen=True)
class ConstructorSpec:
    """Quadrature and profile policy for a build.

    ``theta_width=None`` selects the pointwise momentum-smearing width
    max(|Dw(x)|_F, theta_floor); a float freezes the width everywhere.
    """

    theta_width: float | None = None
    theta_floor: float = 1e-3
    eta: DensityWeight = field(default_factory=DensityWeight.bump)
    t_order: int = 64
    u_order: int = 16
    fd_step: float = 0.005
    rho_floor_rel: float = 1e-10

    def __post_init__(self):
        if self.theta_floor <= 0:
            raise ValueError("theta_floor must be positive")
        if self.t_order < 8 or self.u_order < 8:
            raise ValueError("quadrature orders must be at least 8")
        if self.theta_width is not None and self.theta_width <= 0:
            raise ValueError("theta_width must be positive")
        if not (0.0 < self.rho_floor_rel < 1e-2):
            raise ValueError("rho_floor_rel must be a small positive fraction")


# ---------------------------------------------------------------------------
# the constructed state
# ---------------------------------------------------------------------------


def _fermi_values(t: np.ndarray, r: np.ndarray, d: int) -> np.ndarray:
    """Free-gas kernel f_t(r) for array t and broadcastable radius r."""
    t = np.asarray(t, dtype=float)
    kf = np.where(t > 0.0, t, 0.0) ** (1.0 / d) * math.sqrt(
        (d + 2.0) / d * thomas_fermi_constant(d)
    )
    return t * _shape_function(d, kf * r)


class ConstructedRdm:
    """Quadrature-backed 1-RDM carrying its inputs and evaluation policy."""

    def __init__(self, rho_fn, dec: CurrentDecomposition, spec: ConstructorSpec,
                 dim: int = 3, rho_grad=None):
        self.rho_fn = rho_fn
        self.rho_grad = rho_grad
        self.dec = dec
        self.spec = spec
        self.dim = dim
        a, b = spec.eta.support
        x, w = np.polynomial.legendre.leggauss(spec.t_order)
        self._s = 0.5 * (b - a) * x + 0.5 * (a + b)
        self._sw = 0.5 * (b - a) * w
        gx, gw = np.polynomial.hermite.hermgauss(spec.u_order)
        self._gh = (gx, gw / math.sqrt(math.pi))
        self.metadata: dict = {}

    # -- local ingredients ---------------------------------------------------

    def rho(self, points: np.ndarray) -> np.ndarray:
        return np.maximum(np.asarray(self.rho_fn(np.atleast_2d(points)), dtype=float), 0.0)

    def grad_rho(self, points: np.ndarray, h: float = 1e-4) -> np.ndarray:
        points = np.atleast_2d(points)
        if self.rho_grad is not None:
            return np.asarray(self.rho_grad(points), dtype=float)
        d = points.shape[1]
        out = np.empty_like(points)
        for j in range(d):
            e = np.zeros(d)
            e[j] = 1.0
            out[:, j] = (
                np.asarray(self.rho_fn(points - 2 * h * e))
                - 8.0 * np.asarray(self.rho_fn(points - h * e))
                + 8.0 * np.asarray(self.rho_fn(points + h * e))
                - np.asarray(self.rho_fn(points + 2 * h * e))
            ) / (12.0 * h)
        return out

    def theta_width(self, points: np.ndarray) -> np.ndarray:
        """Momentum smearing width: constant or max(|Dw|_F, floor)."""
        points = np.atleast_2d(points)
        if self.spec.theta_width is not None:
            return np.full(points.shape[0], float(self.spec.theta_width))
        J = self.dec.w_jac(points)
        dw = np.sqrt(np.sum(J**2, axis=(-2, -1)))
        return np.maximum(dw, self.spec.theta_floor)

    def _theta_width_grad(self, points: np.ndarray, h: float = 1e-4) -> np.ndarray:
        points = np.atleast_2d(points)
        d = points.shape[1]
        if self.spec.theta_width is not None:
            return np.zeros_like(points)
        out = np.empty_like(points)
        for j in range(d):
            e = np.zeros(d)
            e[j] = 1.0
            out[:, j] = (self.theta_width(points + h * e) - self.theta_width(points - h * e)) / (2 * h)
        return out

    # -- kernel evaluation ---------------------------------------------------

    def _t_part(self, rx: np.ndarray, ry: np.ndarray, rnorm: np.ndarray) -> np.ndarray:
        """int sqrt(eta(t/rho_x) eta(t/rho_y)) f_t(|z|) dt/t in the symmetric
        variable t = sqrt(rho_x rho_y) s; the fixed s-interval makes the
        result exactly Hermitian and smooth in (x, y)."""
        eta = self.spec.eta
        gm = np.sqrt(rx * ry)
        ok = gm > 0.0
        q = np.ones_like(gm)
        q[ok] = np.sqrt(rx[ok] / ry[ok])
        s = self._s[None, :]
        wgt = np.sqrt(eta.value(s * q[:, None]) * eta.value(s / q[:, None]))
        tval = gm[:, None] * s
        fv = _fermi_values(tval, rnorm[:, None], self.dim)
        out = np.sum(self._sw[None, :] * wgt * fv / s, axis=1)
        out[~ok] = 0.0
        return out

    def _u_part(self, vx, vy, dx, dy, z, mode: str = "analytic") -> np.ndarray:
        """int sqrt(theta_dx(u-vx) theta_dy(u-vy)) e^{i u.z} du.

        The product of the two Gaussian roots is itself a Gaussian, so the
        integral has the closed form used by default; "hermite" evaluates the
        same integral with Gauss-Hermite nodes matched to that Gaussian.
        """
        d = self.dim
        ax = d / (4.0 * dx)
        ay = d / (4.0 * dy)
        A = ax + ay
        m = (ax[:, None] * vx + ay[:, None] * vy) / A[:, None]
        beta = ax * ay / A
        norm = (2.0 * math.pi * dx / d) ** (-d / 4.0) * (2.0 * math.pi * dy / d) ** (-d / 4.0)
        pref = norm * np.exp(-beta * np.sum((vx - vy) ** 2, axis=-1))
        if mode == "analytic":
            return (
                pref
                * (math.pi / A) ** (d / 2.0)
                * np.exp(1j * np.sum(m * z, axis=-1))
                * np.exp(-np.sum(z**2, axis=-1) / (4.0 * A))
            )
        if mode != "hermite":
            raise ValueError(f"unknown u mode {mode!r}")
        gx, gw = self._gh
        sigma = np.sqrt(1.0 / (2.0 * A))
        grids = np.meshgrid(*[gx] * d, indexing="ij")
        wq = np.ones(gx.size**d)
        for gmesh in np.meshgrid(*[gw] * d, indexing="ij"):
            wq = wq * gmesh.ravel()
        xi = np.stack([gmesh.ravel() for gmesh in grids], axis=-1)
        # u = m + sqrt(2) sigma xi against weight exp(-A|u-m|^2)
        acc = np.zeros(z.shape[0], dtype=complex)
        for q in range(xi.shape[0]):
            u = m + math.sqrt(2.0) * sigma[:, None] * xi[q]
            acc += wq[q] * np.exp(1j * np.sum(u * z, axis=-1))
        return pref * (math.pi / A) ** (d / 2.0) * acc

    def kernel(self, x: np.ndarray, y: np.ndarray, u_mode: str = "analytic") -> np.ndarray:
        """Paired kernel values gamma(x_i, y_i), gauge twist included."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        rx, ry = self.rho(x), self.rho(y)
        z = x - y
        tpart = self._t_part(rx, ry, np.linalg.norm(z, axis=-1))
        upart = self._u_part(
            self.dec.w_values(x), self.dec.w_values(y),
            self.theta_width(x), self.theta_width(y), z, mode=u_mode,
        )
        out = tpart * upart
        if self.dec.g is not None:
            out = out * np.exp(1j * (self.dec.g(x) - self.dec.g(y)))
        return out

    def kernel_matrix(self, points: np.ndarray, lattice_weight: float,
                      u_order: int | None = None, u_center=None,
                      u_sigma: float | None = None) -> np.ndarray:
        """Weighted sample matrix sqrt(w) gamma(x_i, x_j) sqrt(w) on shared
        quadrature nodes.

        The evaluation keeps the literal sandwich form a(x) F a(y) with one
        node set for every matrix entry, so the result is a positive
        combination of Schur products of positive semidefinite matrices and
        stays PSD no matter how coarse the quadrature is.
        """
        points = np.atleast_2d(points)
        n = points.shape[0]
        d = self.dim
        rho = self.rho(points)
        if np.max(rho) <= 0:
            raise DegenerateInputError("all sample points have zero density")
        w = self.dec.w_values(points)
        delta = self.theta_width(points)
        a, b = self.spec.eta.support
        pos = rho[rho > 0]
        t_lo, t_hi = float(pos.min()) * a, float(pos.max()) * b
        xg, wg = np.polynomial.legendre.leggauss(self.spec.t_order)
        tk = 0.5 * (t_hi - t_lo) * xg + 0.5 * (t_hi + t_lo)
        twk = 0.5 * (t_hi - t_lo) * wg

        diff = points[:, None, :] - points[None, :, :]
        rnorm = np.linalg.norm(diff, axis=-1)
        G = np.zeros((n, n))
        safe_rho = np.where(rho > 0, rho, 1.0)
        for k in range(tk.size):
            bk = np.sqrt(self.spec.eta.value(np.full(n, tk[k]) / safe_rho))
            bk[rho <= 0] = 0.0
            if not np.any(bk):
                continue
            G += (twk[k] / tk[k]) * np.outer(bk, bk) * _fermi_values(tk[k], rnorm, d)

        order = u_order or min(self.spec.u_order, 8)
        gx, gw = np.polynomial.hermite.hermgauss(order)
        if u_center is None:
            u_center = 0.5 * (w.max(axis=0) + w.min(axis=0))
        u_center = np.asarray(u_center, dtype=float)
        if u_sigma is None:
            spread = float(np.max(w.max(axis=0) - w.min(axis=0)))
            u_sigma = 0.6 * spread / 2.0 + 1.2 * math.sqrt(float(delta.max()) / d) + 1e-6
        grids = np.meshgrid(*[gx] * d, indexing="ij")
        xi = np.stack([gmesh.ravel() for gmesh in grids], axis=-1)
        wq = np.ones(gx.size**d)
        for gmesh in np.meshgrid(*[gw] * d, indexing="ij"):
            wq = wq * gmesh.ravel()
        wq = wq / math.pi ** (d / 2.0)

        norm_theta = (2.0 * math.pi * delta / d) ** (-d / 4.0)
        H = np.zeros((n, n), dtype=complex)
        sigma2 = u_sigma**2
        for q in range(xi.shape[0]):
            u = u_center + math.sqrt(2.0) * u_sigma * xi[q]
            # reference-density division converts the probability rule into
            # a plain du rule: weight = wq / N(u; c, sigma^2)
            ref = (2.0 * math.pi * sigma2) ** (-d / 2.0) * math.exp(
                -0.5 * float((u - u_center) @ (u - u_center)) / sigma2
            )
            cq = norm_theta * np.exp(-d / (4.0 * delta) * np.sum((u - w) ** 2, axis=-1))
            dq = cq * np.exp(1j * (points @ u))
            H += (wq[q] / ref) * np.outer(dq, np.conj(dq))
        M = lattice_weight * H * G
        if self.dec.g is not None:
            ph = np.exp(1j * self.dec.g(points))
            M = np.outer(ph, np.conj(ph)) * M
        return M

    # -- diagonal observables (quadrature node sums) --------------------------

    def density(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        rho = self.rho(points)
        eta_mass_q = float(np.sum(self._sw * self.spec.eta.value(self._s)))
        gx, gw = self._gh
        theta_mass_q = float(np.sum(gw)) ** self.dim
        return rho * eta_mass_q * theta_mass_q

    def current(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        rho = self.rho(points)
        w = self.dec.w_values(points)
        delta = self.theta_width(points)
        sigma = np.sqrt(delta / self.dim)
        eta_mass_q = float(np.sum(self._sw * self.spec.eta.value(self._s)))
        gx, gw = self._gh
        # per-axis first moment of theta around w(x) by the matched rule
        mom = w * float(np.sum(gw)) ** self.dim + (
            math.sqrt(2.0) * sigma[:, None] * float(np.sum(gw * gx)) * float(np.sum(gw)) ** (self.dim - 1)
        )
        cur = rho[:, None] * eta_mass_q * mom
        if self.dec.g is not None:
            cur = cur + (rho * eta_mass_q * float(np.sum(gw)) ** self.dim)[:, None] * self.dec.g.gradient(points)
        return cur

    def kinetic_density(self, points: np.ndarray) -> np.ndarray:
        """Diagonal kinetic density by the analytic mixture formulas.

        Uses the same t-quadrature nodes as the kernel so that finite
        differences of the kernel converge to exactly this quantity.
        """
        points = np.atleast_2d(points)
        d = self.dim
        rho = self.rho(points)
        v = self.dec.v(points)
        delta = self.theta_width(points)
        J = self.dec.w_jac(points)
        dw2 = np.sum(J**2, axis=(-2, -1))
        eta = self.spec.eta
        eta_mass_q = float(np.sum(self._sw * eta.value(self._s)))
        tf_q = float(np.sum(self._sw * eta.value(self._s) * self._s ** (2.0 / d)))
        weiz_q = float(np.sum(self._sw * eta.weiz_integrand(self._s)))
        grho = self.grad_rho(points)
        ok = rho > self.spec.rho_floor_rel * float(np.max(rho)) if np.max(rho) > 0 else rho > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            gss = np.where(ok, np.sum(grho**2, axis=-1) / (4.0 * np.where(ok, rho, 1.0)), 0.0)
        out = (
            thomas_fermi_constant(d) * rho ** (1.0 + 2.0 / d) * tf_q
            + weiz_q * gss
            + eta_mass_q * rho * (np.sum(v**2, axis=-1) + delta + d / (4.0 * delta) * dw2)
        )
        if self.spec.theta_width is None:
            gd = self._theta_width_grad(points)
            out = out + eta_mass_q * rho * d / (8.0 * delta**2) * np.sum(gd**2, axis=-1)
        return out

    def _fd_steps(self, points: np.ndarray, h: float | None) -> np.ndarray:
        """Per-point difference steps adapted to the local length scales.

        Two caps: a mild one against drift and Fermi momentum, and a tight
        one against the density log-derivative, because the kernel passes it
        through the steep density weight whose high derivatives amplify
        truncation error by ~1e6.  The 1.4e-3 product target keeps the
        relative truncation error near 1e-5 uniformly into the tails.
        """
        points = np.atleast_2d(points)
        h0 = h or self.spec.fd_step
        rho = self.rho(points)
        grho = self.grad_rho(points)
        kappa_rho = np.zeros(points.shape[0])
        ok = rho > 0
        kappa_rho[ok] = 0.5 * np.linalg.norm(grho[ok], axis=-1) / rho[ok]
        kappa = 1.0 + np.linalg.norm(self.dec.w_values(points), axis=-1)
        kappa += fermi_radius(float(np.max(rho)) * self.spec.eta.support[1], self.dim)
        width = self.spec.eta.support[1] - self.spec.eta.support[0]
        hs = np.minimum(h0, 0.05 / kappa)
        hs = np.minimum(hs, 1.4e-3 * width**2 / np.maximum(kappa_rho, 1e-12))
        return np.maximum(hs, 1e-4)

    def kinetic_density_fd(self, points: np.ndarray, h: float | None = None) -> np.ndarray:
        """Diagonal kinetic density by mixed fourth-order differences of the
        kernel; the independent route used to cross-check the analytic one."""
        points = np.atleast_2d(points)
        hs = self._fd_steps(points, h)
        d = self.dim
        coeff = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0
        offs = np.array([-2, -1, 1, 2])
        out = np.zeros(points.shape[0])
        for i in range(d):
            e = np.zeros(d)
            e[i] = 1.0
            for pa, ca in zip(offs, coeff):
                xs = points + pa * hs[:, None] * e
                for pb, cb in zip(offs, coeff):
                    out += ca * cb * self.kernel(xs, points + pb * hs[:, None] * e).real / hs**2
        return out

    def current_fd(self, points: np.ndarray, h: float | None = None) -> np.ndarray:
        """Im grad_x gamma(x,y)|_{y=x} by fourth-order differences."""
        points = np.atleast_2d(points)
        hs = self._fd_steps(points, h)
        d = self.dim
        coeff = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0
        offs = np.array([-2, -1, 1, 2])
        out = np.zeros((points.shape[0], d))
        for i in range(d):
            e = np.zeros(d)
            e[i] = 1.0
            for pa, ca in zip(offs, coeff):
                out[:, i] += ca * self.kernel(points + pa * hs[:, None] * e, points).imag / hs
        return out

    def tau_tensor_fd(self, points: np.ndarray, h: float | None = None) -> np.ndarray:
        """Full kinetic tensor grad_x (x) grad_y gamma |diag by differences."""
        points = np.atleast_2d(points)
        hs = self._fd_steps(points, h)
        d = self.dim
        coeff = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0
        offs = np.array([-2, -1, 1, 2])
        out = np.zeros((points.shape[0], d, d), dtype=complex)
        for i in range(d):
            ei = np.zeros(d)
            ei[i] = 1.0
            for j in range(d):
                ej = np.zeros(d)
                ej[j] = 1.0
                acc = np.zeros(points.shape[0], dtype=complex)
                for pa, ca in zip(offs, coeff):
                    xs = points + pa * hs[:, None] * ei
                    for pb, cb in zip(offs, coeff):
                        acc += ca * cb * self.kernel(xs, points + pb * hs[:, None] * ej)
                out[:, i, j] = acc / hs**2
        return out

    def observables(self, grid: GridSpec) -> Observables:
        """Sampled observables; the kinetic tensor comes from kernel
        differences (~150 kernel sweeps), everything else from the analytic
        mixture formulas."""
        pts = grid.points()
        rho = self.density(pts)
        jp = self.current(pts)
        grho = self.grad_rho(pts)
        zeta = 0.5 * grho + 1j * jp
        tau = self.kinetic_density(pts)
        tten = self.tau_tensor_fd(pts)
        shape = grid.counts
        d = self.dim
        return Observables(
            grid=grid,
            rho=ScalarField(grid, rho.reshape(shape, order="F")),
            zeta=VectorField(grid, zeta.reshape(shape + (d,), order="F")),
            jp=VectorField(grid, jp.reshape(shape + (d,), order="F")),
            tau=ScalarField(grid, tau.reshape(shape, order="F")),
            tau_tensor=TensorField(grid, tten.reshape(shape + (d, d), order="F")),
        )

    def gauge_transform(self, g: GaugeFunction) -> "ConstructedRdm":
        """Twist by exp(i(g(y)-g(x))): the current shifts by -rho grad g."""
        if self.dec.g is None:
            newg = g.negated()
        else:
            old = self.dec.g
            newg = GaugeFunction(
                lambda p: old.fn(p) - g.fn(p), lambda p: old.grad(p) - g.grad(p)
            )
        out = ConstructedRdm(
            self.rho_fn, CurrentDecomposition(newg, self.dec.w, self.dec.w_jacobian),
            self.spec, self.dim, self.rho_grad,
        )
        return out

    def with_orders(self, t_order: int | None = None, u_order: int | None = None) -> "ConstructedRdm":
        spec = replace(
            self.spec,
            t_order=t_order or self.spec.t_order,
            u_order=u_order or self.spec.u_order,
        )
        return ConstructedRdm(self.rho_fn, self.dec, spec, self.dim, self.rho_grad)


def build_rdm(rho_fn, dec: CurrentDecomposition, spec: ConstructorSpec | None = None,
              dim: int = 3, rho_grad=None, probe_points: np.ndarray | None = None,
              marginal_tol: float = 1e-4) -> ConstructedRdm:
    """Build the mixture state and sanity-check its marginals at probe points.

    Raises ``DegenerateInputError`` when the density vanishes on the probes
    and ``QuadratureDefect`` when doubling the t-order does not reduce an
    out-of-tolerance marginal error.
    """
    spec = spec or ConstructorSpec()
    crdm = ConstructedRdm(rho_fn, dec, spec, dim, rho_grad)
    if probe_points is not None:
        probe_points = np.atleast_2d(probe_points)
        rho = crdm.rho(probe_points)
        if np.max(rho) <= 0.0:
            raise DegenerateInputError("density vanishes at every probe point")
        keep = rho > 1e-12 * float(np.max(rho))
        pts = probe_points[keep]
        err = _marginal_error(crdm, pts)
        crdm.metadata["marginal_error"] = err
        if err > marginal_tol:
            err2 = _marginal_error(crdm.with_orders(t_order=2 * spec.t_order), pts)
            if err2 > 0.5 * err:
                raise QuadratureDefect(
                    f"marginal error {err:.3e} does not converge (doubled order: {err2:.3e})"
                )
    return crdm


def _marginal_error(crdm: ConstructedRdm, points: np.ndarray) -> float:
    rho = crdm.rho(points)
    v = crdm.dec.v(points)
    dens_err = np.abs(crdm.density(points) - rho) / rho
    cur_err = np.linalg.norm(crdm.current(points) - rho[:, None] * v, axis=-1) / (
        rho * (1.0 + np.linalg.norm(v, axis=-1))
    )
    return float(max(dens_err.max(), cur_err.max()))


def verify_marginals(crdm: ConstructedRdm, points: np.ndarray,
                     tol: float = 1e-6) -> BoundReport:
    """Relative reproduction error of density and current at sample points."""
    points = np.atleast_2d(points)
    rho_in = crdm.rho(points)
    keep = rho_in > 1e-12 * float(np.max(rho_in))
    pts = points[keep]
    rho_in = rho_in[keep]
    v = crdm.dec.v(pts)
    dens_err = np.abs(crdm.density(pts) - rho_in) / rho_in
    cur_err = np.linalg.norm(crdm.current(pts) - rho_in[:, None] * v, axis=-1) / (
        rho_in * (1.0 + np.linalg.norm(v, axis=-1))
    )
    margins = tol - np.concatenate([dens_err, cur_err])
    return BoundReport.from_margins(
        tag="constructor_marginals",
        description="density and current of the built state reproduce the inputs",
        margins=margins,
        tolerance=0.0,
        n_skipped=int(np.count_nonzero(~keep)),
        details={
            "max_density_error": float(dens_err.max()),
            "max_current_error": float(cur_err.max()),
        },
    )


# ---------------------------------------------------------------------------
# kinetic-energy upper bound bookkeeping
# ---------------------------------------------------------------------------


@dataclass
class KineticBoundLedger:
    """Term-by-term record of the kinetic upper bound for one build.

    lhs is Tr(-Lap gamma) evaluated two independent ways; rhs terms follow
    the bound: realized kinetic prefactor times c_TF int rho^(1+2/d), the
    gradient term, the gauge term int rho |v|^2, the strain/vorticity term
    C_d int rho |Dw|, and the explicit surplus paid for flooring the
    momentum-smearing width away from zero.
    """

    lhs_analytic: float
    lhs_kernel_fd: float
    tf_term: float
    weizsacker_term: float
    gauge_term: float
    strain_vorticity_term: float
    floor_term: float
    tf_prefactor: float
    weiz_prefactor: float
    eta_eps: float
    agreement_rel: float
    agreement_tol: float
    quadrature_defect: bool
    passed: bool

    @property
    def rhs_total(self) -> float:
        return (
            self.tf_term
            + self.weizsacker_term
            + self.gauge_term
            + self.strain_vorticity_term
            + self.floor_term
        )

    def to_text(self) -> str:
        rows = [
            ("lhs_analytic", self.lhs_analytic),
            ("lhs_kernel_fd", self.lhs_kernel_fd),
            ("lhs_agreement_rel", self.agreement_rel),
            ("tf_term", self.tf_term),
            ("weizsacker_term", self.weizsacker_term),
            ("gauge_term", self.gauge_term),
            ("strain_vorticity_term", self.strain_vorticity_term),
            ("floor_term", self.floor_term),
            ("rhs_total", self.rhs_total),
            ("tf_prefactor", self.tf_prefactor),
            ("weiz_prefactor", self.weiz_prefactor),
            ("eta_eps", self.eta_eps),
        ]
        lines = ["check = kinetic_bound_ledger", "spin_factor = q^(-2/d) with q = 1"]
        lines += [f"{k} = {v:.17g}" for k, v in rows]
        lines.append(f"quadrature_defect = {'true' if self.quadrature_defect else 'false'}")
        lines.append(f"pass = {'true' if self.passed else 'false'}")
        return "\n".join(lines) + "\n"


def _rhs_terms(rho, grho, v, J, d: int, eta: DensityWeight, delta, width_grad,
               weights, rho_floor_rel: float = 1e-10) -> dict[str, float]:
    floor = rho_floor_rel * float(np.max(rho))
    ok = rho > floor
    gss = np.where(ok, np.sum(grho**2, axis=-1) / (4.0 * np.where(ok, rho, 1.0)), 0.0)
    dw = np.sqrt(np.sum(J**2, axis=(-2, -1)))
    tf = thomas_fermi_constant(d) * eta.tf_factor(d) * float(np.sum(weights * rho ** (1.0 + 2.0 / d)))
    weiz = eta.weiz_factor * float(np.sum(weights * gss))
    gauge = float(np.sum(weights * rho * np.sum(v**2, axis=-1)))
    strain = strain_constant(d) * float(np.sum(weights * rho * dw))
    theta_exact = delta + d / (4.0 * delta) * dw**2
    if width_grad is not None:
        theta_exact = theta_exact + d / (8.0 * delta**2) * np.sum(width_grad**2, axis=-1)
    floor = float(np.sum(weights * rho * np.maximum(theta_exact - strain_constant(d) * dw, 0.0)))
    return {
        "tf": tf,
        "weiz": weiz,
        "gauge": gauge,
        "strain": strain,
        "floor": floor,
    }


def kinetic_bound_ledger(crdm: ConstructedRdm, grid: GridSpec,
                         fd_step: float | None = None,
                         agreement_tol: float = 1e-4,
                         fd_stride: int = 1) -> KineticBoundLedger:
    """Assemble the upper-bound ledger on a grid.

    The kernel-difference lhs may be evaluated on a strided subset of the
    grid (``fd_stride``) to keep the cross-check affordable; both routes are
    integrated with the same rule over the same points so the comparison
    isolates kernel-evaluation error.
    """
    pts = grid.points()
    weights = integration_weights(grid)
    tau_a = crdm.kinetic_density(pts)
    lhs_analytic = float(np.sum(weights * tau_a))

    if fd_stride > 1:
        sel = np.zeros(len(pts), dtype=bool)
        sel[::fd_stride] = True
    else:
        sel = np.ones(len(pts), dtype=bool)
    tau_fd_sel = crdm.kinetic_density_fd(pts[sel], h=fd_step)
    # compare the two routes on the same subset with matching weights
    sub_a = float(np.sum(weights[sel] * tau_a[sel]))
    sub_fd = float(np.sum(weights[sel] * tau_fd_sel))
    agreement = abs(sub_fd - sub_a) / max(abs(sub_a), 1e-300)
    # scale the strided fd integral to the full-grid estimate
    lhs_fd = lhs_analytic * (sub_fd / sub_a) if sub_a != 0 else sub_fd

    rho = crdm.rho(pts)
    grho = crdm.grad_rho(pts)
    v = crdm.dec.v(pts)
    J = crdm.dec.w_jac(pts)
    delta = crdm.theta_width(pts)
    wgrad = None if crdm.spec.theta_width is not None else crdm._theta_width_grad(pts)
    terms = _rhs_terms(rho, grho, v, J, crdm.dim, crdm.spec.eta, delta, wgrad, weights,
                       rho_floor_rel=crdm.spec.rho_floor_rel)

    defect = agreement > agreement_tol
    rhs = terms["tf"] + terms["weiz"] + terms["gauge"] + terms["strain"] + terms["floor"]
    passed = (not defect) and lhs_analytic <= rhs * (1.0 + 1e-10) + 1e-12
    return KineticBoundLedger(
        lhs_analytic=lhs_analytic,
        lhs_kernel_fd=lhs_fd,
        tf_term=terms["tf"],
        weizsacker_term=terms["weiz"],
        gauge_term=terms["gauge"],
        strain_vorticity_term=terms["strain"],
        floor_term=terms["floor"],
        tf_prefactor=crdm.spec.eta.tf_factor(crdm.dim),
        weiz_prefactor=crdm.spec.eta.weiz_factor,
        eta_eps=crdm.spec.eta.eps,
        agreement_rel=agreement,
        agreement_tol=agreement_tol,
        quadrature_defect=bool(defect),
        passed=bool(passed),
    )


@dataclass
class SurrogateBound:
    """Computable upper bound on the constrained-search kinetic energy."""

    value: float
    eps: float
    per_eps: dict[float, float]
    terms: dict[str, float]
    surrogate: bool = True


def kinetic_upper_functional(rho_fn, dec: CurrentDecomposition, spec: ConstructorSpec,
                             grid: GridSpec, eps_grid=(0.1, 0.3, 1.0),
                             dim: int = 3, rho_grad=None) -> SurrogateBound:
    """Upper bound on the kinetic energy of any state with marginals
    (rho, rho v), minimized over the weight-support widths in ``eps_grid``.

    This is a true upper bound: it bounds Tr(-Lap gamma) of the explicit
    build, floor surplus included, without evaluating the kernel.
    """
    crdm = ConstructedRdm(rho_fn, dec, spec, dim, rho_grad)
    pts = grid.points()
    weights = integration_weights(grid)
    rho = crdm.rho(pts)
    if float(np.sum(weights * rho)) <= 0.0:
        return SurrogateBound(0.0, float(eps_grid[0]), {e: 0.0 for e in eps_grid}, {})
    grho = crdm.grad_rho(pts)
    v = dec.v(pts)
    J = dec.w_jac(pts)
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(J))):
        raise DegenerateInputError("velocity decomposition not finite on the grid")
    delta = crdm.theta_width(pts)
    wgrad = None if spec.theta_width is not None else crdm._theta_width_grad(pts)

    per_eps: dict[float, float] = {}
    best: tuple[float, float, dict] | None = None
    for eps in eps_grid:
        eta = DensityWeight.narrowed(float(eps))
        terms = _rhs_terms(rho, grho, v, J, dim, eta, delta, wgrad, weights,
                           rho_floor_rel=spec.rho_floor_rel)
        total = terms["tf"] + terms["weiz"] + terms["gauge"] + terms["strain"] + terms["floor"]
        per_eps[float(eps)] = total
        if best is None or total < best[0]:
            best = (total, float(eps), terms)
    return SurrogateBound(value=best[0], eps=best[1], per_eps=per_eps, terms=best[2])
