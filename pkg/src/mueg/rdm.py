"""One-particle reduced density matrices and their grid observables.

Three kinds of 1-RDM share one informal interface (``kernel``,
``observables``): low-rank orbital expansions, translation-invariant
free-gas kernels, and the quadrature-backed constructor states built in
:mod:`mueg.constructor`.

Observables follow the standard conventions: density rho, complex current
zeta = grad_x gamma(x,y)|_{y=x} (real part = grad rho / 2, imaginary part =
paramagnetic current jp), kinetic density tau and kinetic tensor, the
gauge-invariant intrinsic tensor omega = tau_tensor - zeta (x) conj(zeta)/rho,
and the vorticity curl(jp/rho).  Quotients by rho are only evaluated where
rho exceeds a relative floor; those points are counted as skipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import (
    GridSpec,
    ScalarField,
    TensorField,
    VectorField,
    curl,
    gradient,
    integrate,
    integration_weights,
    jacobian,
)
from .kernels import ShiftedFermiKernel
from .report import BoundReport

__all__ = [
    "GaugeFunction",
    "Orbital",
    "LowRankRdm",
    "FreeGasRdm",
    "Observables",
    "check_pointwise_bounds",
    "check_integrated_bound",
    "gauge_transform",
    "affine_transform",
    "affine_transform_pair",
    "kinetic_energy_affine_rule",
    "coulomb_direct",
    "coulomb_exchange",
    "random_orbital_set",
]

RHO_FLOOR_REL = 1e-12


# ---------------------------------------------------------------------------
# gauge functions and orbitals
# ---------------------------------------------------------------------------


@dataclass
class GaugeFunction:
    """Real scalar gauge field with an evaluable gradient."""

    fn: callable
    grad: callable

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(points), dtype=float)

    def gradient(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.grad(points), dtype=float)

    @classmethod
    def linear(cls, k) -> "GaugeFunction":
        k = np.asarray(k, dtype=float)
        return cls(lambda p: p @ k, lambda p: np.broadcast_to(k, p.shape).copy())

    @classmethod
    def quadratic(cls, quad, lin=None, const: float = 0.0) -> "GaugeFunction":
        """g(x) = x.Q x / 2 + b.x + c with Q symmetrized."""
        Q = np.asarray(quad, dtype=float)
        Q = 0.5 * (Q + Q.T)
        b = np.zeros(Q.shape[0]) if lin is None else np.asarray(lin, dtype=float)

        def fn(p):
            return 0.5 * np.einsum("ni,ij,nj->n", p, Q, p) + p @ b + const

        def grad(p):
            return p @ Q + b

        return cls(fn, grad)

    def negated(self) -> "GaugeFunction":
        return GaugeFunction(lambda p: -self.fn(p), lambda p: -self.grad(p))


@dataclass
class Orbital:
    """Complex orbital as a callable; analytic gradient optional."""

    fn: callable
    grad: callable | None = None

    def value(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(points), dtype=complex)

    def gradient(self, points: np.ndarray) -> np.ndarray | None:
        if self.grad is None:
            return None
        return np.asarray(self.grad(points), dtype=complex)


def _sample_scalar(grid: GridSpec, fn) -> np.ndarray:
    return np.asarray(fn(grid.points()), dtype=complex).reshape(grid.counts, order="F")


def _sample_vector(grid: GridSpec, fn) -> np.ndarray:
    vals = np.asarray(fn(grid.points()), dtype=complex)
    return vals.reshape(grid.counts + (grid.dim,), order="F")


# ---------------------------------------------------------------------------
# observables container
# ---------------------------------------------------------------------------


@dataclass
class Observables:
    """Sampled one-body observables with floor-masked derived quantities."""

    grid: GridSpec
    rho: ScalarField
    zeta: VectorField
    jp: VectorField
    tau: ScalarField
    tau_tensor: TensorField
    rho_floor_rel: float = RHO_FLOOR_REL

    @property
    def mask(self) -> np.ndarray:
        """Points where quotients by rho are evaluated."""
        return self.rho.values > self.rho_floor_rel * float(np.max(self.rho.values))

    def grad_sqrt_rho_sq(self) -> ScalarField:
        """|grad sqrt(rho)|^2 from the exact identity Re zeta = grad rho / 2."""
        re2 = np.sum(self.zeta.values.real**2, axis=-1)
        out = np.zeros(self.grid.counts)
        m = self.mask
        out[m] = re2[m] / self.rho.values[m]
        return ScalarField(self.grid, out)

    def gauge_term_density(self) -> ScalarField:
        """|jp|^2 / rho, zero on floored points."""
        j2 = np.sum(self.jp.values**2, axis=-1)
        out = np.zeros(self.grid.counts)
        m = self.mask
        out[m] = j2[m] / self.rho.values[m]
        return ScalarField(self.grid, out)

    def omega(self) -> TensorField:
        """Intrinsic kinetic tensor tau_tensor - zeta (x) conj(zeta) / rho."""
        z = self.zeta.values
        outer = np.einsum("...i,...j->...ij", z, np.conj(z))
        vals = self.tau_tensor.values.astype(complex).copy()
        m = self.mask
        vals[m] -= outer[m] / self.rho.values[m][..., None, None]
        vals[~m] = 0.0
        return TensorField(self.grid, vals)

    def rho_antisym_velocity_jacobian(self) -> TensorField:
        """rho * antisymmetric_part(D(jp/rho)) via the intrinsic-tensor identity
        (omega - omega^T)/(2i) = Im(omega)."""
        return TensorField(self.grid, np.imag(self.omega().values))

    def vorticity(self) -> VectorField:
        """curl(jp/rho) assembled pointwise from the intrinsic tensor (d=3)."""
        if self.grid.dim != 3:
            raise ValueError("vorticity requires dim=3")
        A = self.rho_antisym_velocity_jacobian().values
        axial = 2.0 * np.stack([A[..., 2, 1], A[..., 0, 2], A[..., 1, 0]], axis=-1)
        out = np.zeros_like(axial)
        m = self.mask
        out[m] = axial[m] / self.rho.values[m][..., None]
        return VectorField(self.grid, out)

    def vorticity_fd(self) -> VectorField:
        """curl(jp/rho) by finite-difference stencils; cross-check route."""
        if self.grid.dim != 3:
            raise ValueError("vorticity requires dim=3")
        v = np.zeros(self.grid.counts + (3,))
        m = self.mask
        v[m] = self.jp.values[m] / self.rho.values[m][..., None]
        return curl(VectorField(self.grid, v))

    def kinetic_energy(self) -> float:
        return float(integrate(self.tau))


# ---------------------------------------------------------------------------
# rdm kinds
# ---------------------------------------------------------------------------


class LowRankRdm:
    """gamma(x,y) = sum_j lam_j phi_j(x) conj(phi_j(y)) on a working grid."""

    def __init__(self, orbitals, occupations, grid: GridSpec,
                 check_orthonormal: bool = True, ortho_tol: float = 1e-8):
        occupations = np.asarray(occupations, dtype=float)
        if occupations.ndim != 1 or len(orbitals) != occupations.size:
            raise ValueError("need one occupation per orbital")
        if np.any(occupations < 0) or np.any(occupations > 1):
            raise ValueError("occupations must lie in [0, 1]")
        self.orbitals = list(orbitals)
        self.occupations = occupations
        self.grid = grid
        self._samples = [_sample_scalar(grid, o.fn) for o in self.orbitals]
        if check_orthonormal:
            self._check_orthonormal(ortho_tol)

    def _check_orthonormal(self, tol: float) -> None:
        n = len(self.orbitals)
        for j in range(n):
            for k in range(j, n):
                ov = integrate(
                    ScalarField(self.grid, self._samples[j] * np.conj(self._samples[k]))
                )
                want = 1.0 if j == k else 0.0
                if abs(ov - want) > tol:
                    raise ValueError(
                        f"orbitals {j},{k} not orthonormal on grid: overlap {ov}"
                    )

    @property
    def dim(self) -> int:
        return self.grid.dim

    def trace(self) -> float:
        return float(np.sum(self.occupations))

    def kernel(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Paired kernel values gamma(x_i, y_i)."""
        x = np.atleast_2d(x)
        y = np.atleast_2d(y)
        out = np.zeros(x.shape[0], dtype=complex)
        for lam, orb in zip(self.occupations, self.orbitals):
            out += lam * orb.value(x) * np.conj(orb.value(y))
        return out

    def kernel_matrix(self, points: np.ndarray) -> np.ndarray:
        vals = np.stack([o.value(points) for o in self.orbitals])
        return np.einsum("j,jx,jy->xy", self.occupations, vals, np.conj(vals))

    def _orbital_gradients(self, use_analytic_grad: bool = True):
        pts = self.grid.points()
        grads = []
        for orb, samp in zip(self.orbitals, self._samples):
            g = orb.gradient(pts) if use_analytic_grad else None
            if g is not None:
                grads.append(g.reshape(self.grid.counts + (self.grid.dim,), order="F"))
            else:
                grads.append(gradient(ScalarField(self.grid, samp)).values)
        return grads

    def observables(self, use_analytic_grad: bool = True) -> Observables:
        d = self.grid.dim
        rho = np.zeros(self.grid.counts)
        zeta = np.zeros(self.grid.counts + (d,), dtype=complex)
        tten = np.zeros(self.grid.counts + (d, d), dtype=complex)
        for lam, samp, grad in zip(
            self.occupations, self._samples, self._orbital_gradients(use_analytic_grad)
        ):
            rho += lam * np.abs(samp) ** 2
            zeta += lam * grad * np.conj(samp)[..., None]
            tten += lam * np.einsum("...i,...j->...ij", grad, np.conj(grad))
        tau = np.real(np.trace(tten, axis1=-2, axis2=-1))
        return Observables(
            grid=self.grid,
            rho=ScalarField(self.grid, rho),
            zeta=VectorField(self.grid, zeta),
            jp=VectorField(self.grid, zeta.imag.copy()),
            tau=ScalarField(self.grid, tau),
            tau_tensor=TensorField(self.grid, tten),
        )

    def kinetic_energy(self, use_analytic_grad: bool = True) -> float:
        """Orbital-wise sum_j lam_j ||grad phi_j||^2 (the accurate route)."""
        total = 0.0
        for lam, grad in zip(self.occupations, self._orbital_gradients(use_analytic_grad)):
            total += lam * float(
                integrate(ScalarField(self.grid, np.sum(np.abs(grad) ** 2, axis=-1)))
            )
        return total

    def kinetic_density_via_kernel(self, points: np.ndarray, h: float = 1e-3) -> np.ndarray:
        """tau at chosen points by mixed differences of the kernel; kept as a
        cross-check of the orbital-wise route."""
        points = np.atleast_2d(points)
        d = points.shape[1]
        coeff = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0
        offs = np.array([-2, -1, 1, 2])
        out = np.zeros(points.shape[0])
        for i in range(d):
            e = np.zeros(d)
            e[i] = 1.0
            for pa, ca in zip(offs, coeff):
                for pb, cb in zip(offs, coeff):
                    out += ca * cb * self.kernel(
                        points + pa * h * e, points + pb * h * e
                    ).real / h**2
        return out

    def point_observables(self, points: np.ndarray) -> dict[str, np.ndarray]:
        """rho, zeta, jp, tau at arbitrary points (needs analytic gradients)."""
        points = np.atleast_2d(points)
        n, d = points.shape
        rho = np.zeros(n)
        zeta = np.zeros((n, d), dtype=complex)
        tau = np.zeros(n)
        for lam, orb in zip(self.occupations, self.orbitals):
            v = orb.value(points)
            g = orb.gradient(points)
            if g is None:
                raise ValueError("point_observables needs analytic gradients")
            rho += lam * np.abs(v) ** 2
            zeta += lam * g * np.conj(v)[:, None]
            tau += lam * np.sum(np.abs(g) ** 2, axis=-1)
        return {"rho": rho, "zeta": zeta, "jp": zeta.imag.copy(), "tau": tau}

    def velocity(self, points: np.ndarray) -> np.ndarray:
        """jp/rho at arbitrary points; callers must stay on supp rho."""
        obs = self.point_observables(points)
        return obs["jp"] / obs["rho"][:, None]

    def gauge_transform(self, g: GaugeFunction) -> "LowRankRdm":
        """Multiply the kernel by exp(i(g(y)-g(x))); orbitals pick up exp(-ig)."""
        new = []
        for orb in self.orbitals:
            new.append(_phase_twisted_orbital(orb, g))
        return LowRankRdm(new, self.occupations.copy(), self.grid,
                          check_orthonormal=False)


def _phase_twisted_orbital(orb: Orbital, g: GaugeFunction) -> Orbital:
    def fn(p, _orb=orb, _g=g):
        return np.exp(-1j * _g(p)) * _orb.value(p)

    grad = None
    if orb.grad is not None:
        def grad(p, _orb=orb, _g=g):
            ph = np.exp(-1j * _g(p))[..., None]
            return ph * (_orb.gradient(p) - 1j * _g.gradient(p) * _orb.value(p)[..., None])

    return Orbital(fn, grad)


class FreeGasRdm:
    """Translation-invariant free-gas state on a working grid."""

    def __init__(self, kernel: ShiftedFermiKernel, grid: GridSpec):
        self.shifted = kernel
        self.grid = grid

    def kernel(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        y = np.atleast_2d(y)
        return self.shifted.value(x - y)

    def observables(self) -> Observables:
        d = self.grid.dim
        t, cur, kin = self.shifted.observables()
        shape = self.grid.counts
        rho = np.full(shape, t)
        jp = np.broadcast_to(cur, shape + (d,)).copy()
        zeta = 1j * jp.astype(complex)
        u = np.asarray(self.shifted.shift, dtype=float)
        base_kin = self.shifted.base.diagonal_kinetic_density()
        tten = t * np.einsum("i,j->ij", u, u) + base_kin / d * np.eye(d)
        tten = np.broadcast_to(tten, shape + (d, d)).astype(complex).copy()
        return Observables(
            grid=self.grid,
            rho=ScalarField(self.grid, rho),
            zeta=VectorField(self.grid, zeta),
            jp=VectorField(self.grid, jp),
            tau=ScalarField(self.grid, np.full(shape, kin)),
            tau_tensor=TensorField(self.grid, tten),
        )


# ---------------------------------------------------------------------------
# inequality checks
# ---------------------------------------------------------------------------


def check_pointwise_bounds(obs: Observables, tol: float = 1e-10,
                           boundary_width: int = 2) -> BoundReport:
    """Pointwise kinetic-density inequalities on interior, floored points.

    Checks, relative to the local kinetic density tau:
      (i)  |grad sqrt(rho)|^2 + |jp|^2/rho + rho |D_a(jp/rho)| / sqrt(d) <= tau
      (ii) |jp| <= |zeta| <= sqrt(tau * rho)
    """
    d = obs.grid.dim
    m = obs.mask & obs.grid.interior_mask(boundary_width)
    n_skipped = int(obs.grid.n_points - np.count_nonzero(m))
    rho = obs.rho.values[m]
    tau = obs.tau.values[m]
    gss = obs.grad_sqrt_rho_sq().values[m]
    gterm = obs.gauge_term_density().values[m]
    A = obs.rho_antisym_velocity_jacobian().values[m]
    a_norm = np.sqrt(np.sum(A**2, axis=(-2, -1)))
    zeta_norm = np.sqrt(np.sum(np.abs(obs.zeta.values[m]) ** 2, axis=-1))
    jp_norm = np.sqrt(np.sum(obs.jp.values[m] ** 2, axis=-1))

    scale = np.maximum(tau, 1e-300)
    margin_i = (tau - gss - gterm - a_norm / math.sqrt(d)) / scale
    margin_ii_lo = (zeta_norm - jp_norm) / np.maximum(np.sqrt(tau * rho), 1e-300)
    margin_ii_hi = (np.sqrt(tau * rho) - zeta_norm) / np.maximum(np.sqrt(tau * rho), 1e-300)
    margins = np.concatenate([margin_i, margin_ii_lo, margin_ii_hi])
    return BoundReport.from_margins(
        tag="pointwise_kinetic_density",
        description="local kinetic density dominates gradient, current and "
        "rotation terms; complex current squeezed between |jp| and sqrt(tau rho)",
        margins=margins,
        tolerance=tol,
        n_skipped=n_skipped,
        details={
            "min_margin_i": float(margin_i.min()),
            "min_margin_ii_lower": float(margin_ii_lo.min()),
            "min_margin_ii_upper": float(margin_ii_hi.min()),
        },
    )


VORTICITY_CONSTANT = 1.0 / math.sqrt(6.0)
VORTICITY_CONSTANT_STRICT = 1.0


def check_integrated_bound(obs: Observables, kinetic_energy: float | None = None,
                           strict: bool = False, tol: float = 1e-8) -> BoundReport:
    """Integrated lower bound on the kinetic energy (d=3):

    Tr(-Lap gamma) >= int |grad sqrt rho|^2 + int |jp|^2/rho + c int rho |nu|

    with c = 1/sqrt(6), improvable to c = 1 in strict mode.
    """
    if obs.grid.dim != 3:
        raise ValueError("integrated bound requires dim=3")
    lhs = obs.kinetic_energy() if kinetic_energy is None else float(kinetic_energy)
    c = VORTICITY_CONSTANT_STRICT if strict else VORTICITY_CONSTANT
    weiz = float(integrate(obs.grad_sqrt_rho_sq()))
    gauge = float(integrate(obs.gauge_term_density()))
    # rho |nu| = sqrt(2) |Im omega|_F pointwise
    A = obs.rho_antisym_velocity_jacobian().values
    rho_nu = math.sqrt(2.0) * np.sqrt(np.sum(A**2, axis=(-2, -1)))
    vort = float(integrate(ScalarField(obs.grid, rho_nu)))
    rhs = weiz + gauge + c * vort
    margin = (lhs - rhs) / max(abs(lhs), 1e-300)
    return BoundReport.from_margins(
        tag="integrated_kinetic_lower_bound" + ("_strict" if strict else ""),
        description="kinetic energy dominates gradient + current + vorticity terms "
        f"(vorticity constant {c:.6f})",
        margins=np.array([margin]),
        tolerance=tol,
        details={
            "kinetic": lhs,
            "weizsacker_term": weiz,
            "gauge_term": gauge,
            "vorticity_term": vort,
            "constant": c,
        },
    )


# ---------------------------------------------------------------------------
# transformations
# ---------------------------------------------------------------------------


def gauge_transform(rdm, g: GaugeFunction):
    """Dispatch to the rdm's own gauge transformation."""
    return rdm.gauge_transform(g)


def affine_transform(rdm: LowRankRdm, matrix, offset, grid_out: GridSpec,
                     use_chain_rule: bool = True) -> LowRankRdm:
    """Pull back a low-rank rdm along T(x) = M x + a.

    New orbitals are sqrt(|det M|) phi(T(x)); with ``use_chain_rule`` the
    analytic gradients are transported as M^T (grad phi)(T(x)), otherwise the
    result falls back to stencil gradients so the two routes stay independent.
    """
    M = np.asarray(matrix, dtype=float)
    a = np.asarray(offset, dtype=float)
    det = abs(float(np.linalg.det(M)))
    if det < 1e-12:
        raise ValueError("affine map must be nonsingular")
    root = math.sqrt(det)

    def make(orb: Orbital) -> Orbital:
        def fn(p, _orb=orb):
            return root * _orb.value(p @ M.T + a)

        grad = None
        if use_chain_rule and orb.grad is not None:
            def grad(p, _orb=orb):
                return root * _orb.gradient(p @ M.T + a) @ M

        return Orbital(fn, grad)

    return LowRankRdm(
        [make(o) for o in rdm.orbitals],
        rdm.occupations.copy(),
        grid_out,
        check_orthonormal=False,
    )


def affine_transform_pair(rho_fn, jp_fn, matrix, offset):
    """Transform a density/current pair along T(x) = M x + a:
    (rho, jp) -> |det M| (rho o T, M^T (jp o T))."""
    M = np.asarray(matrix, dtype=float)
    a = np.asarray(offset, dtype=float)
    det = abs(float(np.linalg.det(M)))
    if det < 1e-12:
        raise ValueError("affine map must be nonsingular")

    def rho_t(p):
        return det * np.asarray(rho_fn(p @ M.T + a))

    def jp_t(p):
        return det * np.asarray(jp_fn(p @ M.T + a)) @ M

    return rho_t, jp_t


def kinetic_energy_affine_rule(obs: Observables, matrix) -> float:
    """Kinetic energy of the pulled-back state from the original tensor:
    int Tr(M M^T tau_tensor)."""
    M = np.asarray(matrix, dtype=float)
    mmt = M @ M.T
    dens = np.real(np.einsum("ij,...ji->...", mmt, obs.tau_tensor.values))
    return float(integrate(ScalarField(obs.grid, dens)))


# ---------------------------------------------------------------------------
# Coulomb energies
# ---------------------------------------------------------------------------


def _inverse_distance(p1: np.ndarray, p2: np.ndarray, cell_volume: float) -> np.ndarray:
    """Pairwise 1/|x-y| with the self-cell replaced by the average of 1/r
    over a ball of the same volume (removes the O(h) singular-cell bias)."""
    diff = p1[:, None, :] - p2[None, :, :]
    r = np.sqrt(np.sum(diff**2, axis=-1))
    r_eq = (3.0 * cell_volume / (4.0 * math.pi)) ** (1.0 / 3.0)
    near = r < 1e-12
    out = np.empty_like(r)
    out[~near] = 1.0 / r[~near]
    out[near] = 1.5 / r_eq
    return out


def coulomb_direct(mu1: ScalarField, mu2: ScalarField, block: int = 2048) -> float:
    """Coulomb inner product (1/2) int int mu1(x) mu2(y) / |x-y|."""
    if mu1.grid.dim != 3 or mu2.grid.dim != 3:
        raise ValueError("Coulomb integrals require dim=3")
    for f in (mu1, mu2):
        if not np.all(np.isfinite(f.values)):
            raise ValueError("non-integrable input")
    p1 = mu1.grid.points()
    p2 = mu2.grid.points()
    w1 = mu1.grid.cell_volume * mu1.values.reshape(-1, order="F").real
    w2 = mu2.grid.cell_volume * mu2.values.reshape(-1, order="F").real
    cell = min(mu1.grid.cell_volume, mu2.grid.cell_volume)
    total = 0.0
    for i0 in range(0, len(p1), block):
        k = _inverse_distance(p1[i0 : i0 + block], p2, cell)
        total += w1[i0 : i0 + block] @ k @ w2
    return 0.5 * total


def coulomb_exchange(rdm, grid: GridSpec | None = None, block: int = 1024) -> float:
    """Exchange energy (1/2) int int |gamma(x,y)|^2 / |x-y| >= 0.

    For a quasi-free state with this 1-RDM, the Coulomb energy minus the
    direct term equals minus this quantity.
    """
    grid = grid or rdm.grid
    if grid.dim != 3:
        raise ValueError("Coulomb integrals require dim=3")
    pts = grid.points()
    w = grid.cell_volume
    total = 0.0
    for i0 in range(0, len(pts), block):
        chunk = pts[i0 : i0 + block]
        gam = _kernel_block(rdm, chunk, pts)
        k = _inverse_distance(chunk, pts, grid.cell_volume)
        total += float(np.sum(np.abs(gam) ** 2 * k)) * w * w
    return 0.5 * total


def _kernel_block(rdm, pts_a: np.ndarray, pts_b: np.ndarray) -> np.ndarray:
    """Dense gamma(x_i, y_j) block using whatever evaluation the rdm offers."""
    if isinstance(rdm, LowRankRdm):
        vals_a = np.stack([o.value(pts_a) for o in rdm.orbitals])
        vals_b = np.stack([o.value(pts_b) for o in rdm.orbitals])
        return np.einsum("j,jx,jy->xy", rdm.occupations, vals_a, np.conj(vals_b))
    if isinstance(rdm, FreeGasRdm):
        return rdm.shifted.value(
            (pts_a[:, None, :] - pts_b[None, :, :]).reshape(-1, pts_a.shape[1])
        ).reshape(len(pts_a), len(pts_b))
    na, nb = len(pts_a), len(pts_b)
    xa = np.repeat(pts_a, nb, axis=0)
    xb = np.tile(pts_b, (na, 1))
    return rdm.kernel(xa, xb).reshape(na, nb)


def quasifree_coulomb_minus_direct(rdm, grid: GridSpec | None = None) -> float:
    """Coulomb energy of the quasi-free lift minus the direct term; always
    equals the negative exchange energy bound."""
    return -coulomb_exchange(rdm, grid)


# ---------------------------------------------------------------------------
# test corpus
# ---------------------------------------------------------------------------


def _gaussian_orbital(center, inv_width2, wave, amp, lin) -> Orbital:
    """(amp + lin.x) * exp(-|x-c|^2 / (2 s^2) + i k.x) with analytic gradient."""
    c = np.asarray(center, dtype=float)
    k = np.asarray(wave, dtype=float)
    lin = np.asarray(lin, dtype=complex)

    def fn(p):
        dx = p - c
        envelope = np.exp(-0.5 * inv_width2 * np.sum(dx**2, axis=-1) + 1j * (p @ k))
        return (amp + p @ lin) * envelope

    def grad(p):
        dx = p - c
        envelope = np.exp(-0.5 * inv_width2 * np.sum(dx**2, axis=-1) + 1j * (p @ k))
        poly = amp + p @ lin
        log_grad = -inv_width2 * dx + 1j * k
        return envelope[..., None] * (lin + poly[..., None] * log_grad)

    return Orbital(fn, grad)


def random_orbital_set(rng: np.random.Generator, n_orbitals: int, grid: GridSpec,
                       max_wave: float = 1.5) -> LowRankRdm:
    """Random smooth complex orbital set, orthonormalized on the grid.

    Orbitals are polynomial-modulated Gaussians with random phases; linear
    combinations keep analytic gradients, so downstream pointwise checks are
    exact to roundoff.
    """
    d = grid.dim
    raw = []
    for _ in range(n_orbitals):
        center = rng.uniform(-0.6, 0.6, size=d)
        width = rng.uniform(0.7, 1.2)
        wave = rng.uniform(-max_wave, max_wave, size=d)
        amp = complex(rng.normal(), rng.normal())
        lin = rng.normal(size=d) + 1j * rng.normal(size=d)
        raw.append(_gaussian_orbital(center, 1.0 / width**2, wave, amp, lin))

    # Gram-Schmidt with grid inner products, tracking exact combination
    # coefficients so the orthonormal orbitals stay analytic; uses the same
    # integration weights as the orthonormality check
    pts = grid.points()
    w = integration_weights(grid)
    samples = [o.value(pts) for o in raw]
    coeffs: list[np.ndarray] = []
    kept_samples: list[np.ndarray] = []
    for i in range(len(raw)):
        c = np.zeros(len(raw), dtype=complex)
        c[i] = 1.0
        v = samples[i].copy()
        for cp, vp in zip(coeffs, kept_samples):
            ip = np.sum(w * np.conj(vp) * v)
            v -= ip * vp
            c -= ip * cp
        nrm = math.sqrt(float(np.real(np.sum(w * np.abs(v) ** 2))))
        if nrm < 1e-8:
            continue
        coeffs.append(c / nrm)
        kept_samples.append(v / nrm)
    ortho = [_linear_combination(raw, c) for c in coeffs]
    occ = rng.uniform(0.2, 1.0, size=len(ortho))
    return LowRankRdm(ortho, occ, grid, check_orthonormal=True, ortho_tol=1e-7)


def _linear_combination(raw, coeff: np.ndarray) -> Orbital:
    def fn(p, _raw=raw, _c=coeff):
        return sum(c * o.value(p) for c, o in zip(_c, _raw))

    def grad(p, _raw=raw, _c=coeff):
        return sum(c * o.gradient(p) for c, o in zip(_c, _raw))

    return Orbital(fn, grad)
