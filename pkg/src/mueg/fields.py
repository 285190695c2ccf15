"""Uniform-grid scalar/vector/tensor fields with differential operators,
quadrature rules and a plain-text file format.

All fields live on a rectangular lattice described by :class:`GridSpec`.
Derivatives use fourth-order stencils (central in the interior, one-sided in
the two boundary layers), so they are exact on cubic polynomials and leave
pointwise inequality margins clean at the 1e-6 level on smooth data.
Boundary layers are lower quality than the interior; sweeps that check
pointwise inequalities should restrict themselves to ``interior_mask``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GridError",
    "UnsupportedDimensionError",
    "FieldIOError",
    "GridSpec",
    "ScalarField",
    "VectorField",
    "TensorField",
    "Quadrature",
    "gradient",
    "jacobian",
    "symmetric_part",
    "antisymmetric_part",
    "curl",
    "integrate",
    "integrate_weighted",
    "write_field",
    "read_field",
]


class GridError(ValueError):
    """Grid is malformed or too small for the requested stencil."""


class UnsupportedDimensionError(ValueError):
    """Operation is only defined for a specific spatial dimension."""


class FieldIOError(ValueError):
    """Malformed field file; carries the 1-based offending line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class GridSpec:
    """Uniform rectangular grid: origin + i*spacing, i = 0..counts-1 per axis."""

    dim: int
    origin: tuple[float, ...]
    spacing: tuple[float, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise UnsupportedDimensionError(f"dim must be 1, 2 or 3, got {self.dim}")
        for name in ("origin", "spacing", "counts"):
            if len(getattr(self, name)) != self.dim:
                raise GridError(f"{name} must have {self.dim} entries")
        if any(h <= 0 for h in self.spacing):
            raise GridError("spacing must be positive")
        if any(n < 4 for n in self.counts):
            raise GridError("need at least 4 points per axis")

    @classmethod
    def cube(cls, dim: int, lo: float, hi: float, n: int) -> "GridSpec":
        h = (hi - lo) / (n - 1)
        return cls(dim, (lo,) * dim, (h,) * dim, (n,) * dim)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    @property
    def n_points(self) -> int:
        return int(np.prod(self.counts))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis(self, i: int) -> np.ndarray:
        return self.origin[i] + self.spacing[i] * np.arange(self.counts[i])

    def points(self) -> np.ndarray:
        """All grid points, shape (n_points, dim), x-fastest ordering."""
        axes = [self.axis(i) for i in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1, order="F") for m in mesh], axis=-1)

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*[self.axis(i) for i in range(self.dim)], indexing="ij")

    def interior_mask(self, width: int = 2) -> np.ndarray:
        """Boolean mask of points at least `width` cells from every face."""
        mask = np.ones(self.counts, dtype=bool)
        for ax, n in enumerate(self.counts):
            idx = [slice(None)] * self.dim
            idx[ax] = slice(0, width)
            mask[tuple(idx)] = False
            idx[ax] = slice(n - width, n)
            mask[tuple(idx)] = False
        return mask


def _check_values(grid: GridSpec, values: np.ndarray, trailing: tuple[int, ...]):
    expect = grid.counts + trailing
    if values.shape != expect:
        raise GridError(f"values shape {values.shape} does not match grid {expect}")
    if not np.all(np.isfinite(values)):
        raise GridError("field contains non-finite values")


@dataclass
class ScalarField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        _check_values(self.grid, self.values, ())

    @classmethod
    def sample(cls, grid: GridSpec, fn) -> "ScalarField":
        vals = np.asarray(fn(grid.points()))
        return cls(grid, vals.reshape(grid.counts, order="F"))


@dataclass
class VectorField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        _check_values(self.grid, self.values, (self.grid.dim,))

    @classmethod
    def sample(cls, grid: GridSpec, fn) -> "VectorField":
        vals = np.asarray(fn(grid.points()))
        return cls(grid, vals.reshape(grid.counts + (grid.dim,), order="F"))

    def component(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.values[..., i])


@dataclass
class TensorField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        d = self.grid.dim
        _check_values(self.grid, self.values, (d, d))

    def frobenius_norm(self) -> ScalarField:
        mag = np.sqrt(np.sum(np.abs(self.values) ** 2, axis=(-2, -1)))
        return ScalarField(self.grid, mag)

    def trace(self) -> ScalarField:
        return ScalarField(self.grid, np.trace(self.values, axis1=-2, axis2=-1))


# fourth-order first-derivative stencils; one-sided rows are used in the two
# boundary layers where the central stencil would leave the grid
_CENTRAL = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0  # offsets -2..2
_EDGE0 = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0  # offsets 0..4
_EDGE1 = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0  # offsets -1..3


def _diff_axis(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    n = values.shape[axis]
    if n < 5:
        raise GridError("need at least 5 points per axis for fourth-order stencils")
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[2:-2] = (v[:-4] - 8.0 * v[1:-3] + 8.0 * v[3:-1] - v[4:]) / (12.0 * h)
    out[0] = sum(c * v[k] for k, c in enumerate(_EDGE0)) / h
    out[1] = sum(c * v[k] for k, c in enumerate(_EDGE1)) / h
    out[-1] = -sum(c * v[n - 1 - k] for k, c in enumerate(_EDGE0)) / h
    out[-2] = -sum(c * v[n - 1 - k] for k, c in enumerate(_EDGE1)) / h
    return np.moveaxis(out, 0, axis)


def gradient(f: ScalarField) -> VectorField:
    """Fourth-order gradient; exact on cubic polynomials."""
    g = f.grid
    comps = [_diff_axis(f.values, ax, g.spacing[ax]) for ax in range(g.dim)]
    return VectorField(g, np.stack(comps, axis=-1))


def jacobian(u: VectorField) -> TensorField:
    """Derivative matrix with entries J[..., i, j] = d u_i / d x_j."""
    g = u.grid
    rows = []
    for i in range(g.dim):
        rows.append(
            np.stack(
                [_diff_axis(u.values[..., i], ax, g.spacing[ax]) for ax in range(g.dim)],
                axis=-1,
            )
        )
    return TensorField(g, np.stack(rows, axis=-2))


def symmetric_part(t: TensorField) -> TensorField:
    return TensorField(t.grid, 0.5 * (t.values + np.swapaxes(t.values, -2, -1)))


def antisymmetric_part(t: TensorField) -> TensorField:
    return TensorField(t.grid, 0.5 * (t.values - np.swapaxes(t.values, -2, -1)))


def curl(u: VectorField) -> VectorField:
    """rot u for d=3; satisfies |antisymmetric_part(jacobian(u))|_F = |curl u|/sqrt(2)."""
    if u.grid.dim != 3:
        raise UnsupportedDimensionError("curl requires dim=3")
    J = jacobian(u).values
    c = np.stack(
        [
            J[..., 2, 1] - J[..., 1, 2],
            J[..., 0, 2] - J[..., 2, 0],
            J[..., 1, 0] - J[..., 0, 1],
        ],
        axis=-1,
    )
    return VectorField(u.grid, c)


def _gregory_weights(n: int, h: float) -> np.ndarray:
    """Trapezoid weights with fourth-order endpoint corrections.

    Weight sums are exactly (n-1)h, so constants integrate exactly.
    """
    w = np.full(n, h)
    if n >= 8:
        w[[0, -1]] = 3.0 / 8.0 * h
        w[[1, -2]] = 7.0 / 6.0 * h
        w[[2, -3]] = 23.0 / 24.0 * h
    else:
        w[[0, -1]] = 0.5 * h
    return w


def integration_weights(grid: GridSpec) -> np.ndarray:
    """Per-point weights of the integration rule, flat x-fastest ordering."""
    w = _gregory_weights(grid.counts[0], grid.spacing[0])
    for ax in range(1, grid.dim):
        w = np.multiply.outer(w, _gregory_weights(grid.counts[ax], grid.spacing[ax]))
    return w.reshape(-1, order="F")


def integrate(f: ScalarField) -> float | complex:
    """Tensor-product endpoint-corrected trapezoid rule."""
    if not np.all(np.isfinite(f.values)):
        raise GridError("cannot integrate non-finite field")
    acc = f.values
    for ax in range(f.grid.dim - 1, -1, -1):
        w = _gregory_weights(f.grid.counts[ax], f.grid.spacing[ax])
        acc = np.tensordot(acc, w, axes=([ax], [0]))
    val = complex(acc)
    return val.real if abs(val.imag) == 0.0 else val


def integrate_weighted(f: ScalarField, w: ScalarField) -> float | complex:
    return integrate(ScalarField(f.grid, f.values * w.values))


@dataclass
class Quadrature:
    """Nodes/weights pair; ``nodes`` has shape (n,) or (n, d)."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if np.any(self.weights <= 0):
            raise ValueError("quadrature weights must be positive")

    def integrate(self, fn) -> float | complex:
        return np.sum(self.weights * np.asarray(fn(self.nodes)), axis=0)

    @classmethod
    def line_segment(cls, order: int, a: float, b: float) -> "Quadrature":
        """Gauss-Legendre rule on [a, b]."""
        x, w = np.polynomial.legendre.leggauss(order)
        return cls(0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w)

    @classmethod
    def gaussian(cls, order: int, mean: np.ndarray, sigma: np.ndarray) -> "Quadrature":
        """Tensor Gauss-Hermite rule against a normal probability density.

        Integrates f against N(mean, diag(sigma^2)); weights sum to 1, so the
        rule is exact for the density's own mass.
        """
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), mean.shape)
        x, w = np.polynomial.hermite.hermgauss(order)
        d = mean.size
        grids = np.meshgrid(*[x] * d, indexing="ij")
        wgrids = np.meshgrid(*[w] * d, indexing="ij")
        nodes = np.stack(
            [mean[i] + math.sqrt(2.0) * sigma[i] * grids[i].ravel() for i in range(d)],
            axis=-1,
        )
        weights = np.prod(np.stack([wg.ravel() for wg in wgrids], -1), axis=-1)
        weights = weights / math.pi ** (d / 2.0)
        return cls(nodes if d > 1 else nodes[:, 0], weights)


# ---------------------------------------------------------------------------
# Plain-text field files: "MUEG-FIELD 1"
# ---------------------------------------------------------------------------

_MAGIC = "MUEG-FIELD 1"


def _field_components(f) -> int:
    if isinstance(f, ScalarField):
        return 1
    if isinstance(f, VectorField):
        return f.grid.dim
    if isinstance(f, TensorField):
        return f.grid.dim**2
    raise TypeError(f"not a field: {type(f)!r}")


def write_field(path, f) -> None:
    """Write a field in the MUEG-FIELD 1 text format (17 significant digits)."""
    g = f.grid
    c = _field_components(f)
    flat = f.values.reshape(g.counts + (c,), order="C")
    flat = flat.reshape(-1, c, order="F")
    is_complex = np.iscomplexobj(f.values)
    with open(path, "w") as fh:
        fh.write(_MAGIC + "\n")
        fh.write(f"dim {g.dim} components {c}\n")
        fh.write(" ".join(f"{v:.17g}" for v in g.origin) + "\n")
        fh.write(" ".join(f"{v:.17g}" for v in g.spacing) + "\n")
        fh.write(" ".join(str(n) for n in g.counts) + "\n")
        for row in flat:
            if is_complex:
                fh.write(" ".join(f"{v.real:.17g} {v.imag:.17g}" for v in row) + "\n")
            else:
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def read_field(path):
    """Read a MUEG-FIELD 1 file; returns Scalar/Vector/TensorField."""
    with open(path) as fh:
        lines = fh.read().splitlines()

    def bad(msg, ln):
        raise FieldIOError(msg, ln)

    if not lines or lines[0].strip() != _MAGIC:
        bad(f"expected magic '{_MAGIC}'", 1)
    if len(lines) < 5:
        bad("truncated header", len(lines))
    hdr = lines[1].split()
    if len(hdr) != 4 or hdr[0] != "dim" or hdr[2] != "components":
        bad("expected 'dim <d> components <c>'", 2)
    try:
        dim, comp = int(hdr[1]), int(hdr[3])
    except ValueError:
        bad("dim/components must be integers", 2)

    def floats(ln, expect):
        parts = lines[ln - 1].split()
        if len(parts) != expect:
            bad(f"expected {expect} values, got {len(parts)}", ln)
        try:
            return tuple(float(p) for p in parts)
        except ValueError:
            bad("not a number", ln)

    origin = floats(3, dim)
    spacing = floats(4, dim)
    parts = lines[4].split()
    if len(parts) != dim:
        bad(f"expected {dim} counts", 5)
    try:
        counts = tuple(int(p) for p in parts)
    except ValueError:
        bad("counts must be integers", 5)
    grid = GridSpec(dim, origin, spacing, counts)

    n = grid.n_points
    if len(lines) < 5 + n:
        bad(f"expected {n} value lines, found {len(lines) - 5}", len(lines))
    rows = np.empty((n, comp), dtype=complex)
    any_imag = False
    for i in range(n):
        ln = 6 + i
        parts = lines[ln - 1].split()
        if len(parts) == comp:
            try:
                rows[i] = [float(p) for p in parts]
            except ValueError:
                bad("not a number", ln)
        elif len(parts) == 2 * comp:
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                bad("not a number", ln)
            rows[i] = [complex(vals[2 * k], vals[2 * k + 1]) for k in range(comp)]
            any_imag = True
        else:
            bad(f"expected {comp} (real) or {2 * comp} (re/im) values", ln)
    if not any_imag:
        rows = rows.real
    data = rows.reshape(grid.counts + (comp,), order="F")
    if comp == 1:
        return ScalarField(grid, data[..., 0])
    if comp == dim:
        return VectorField(grid, data)
    if comp == dim * dim:
        return TensorField(grid, data.reshape(grid.counts + (dim, dim)))
    raise FieldIOError(f"components {comp} not scalar/vector/tensor for dim {dim}", 2)
