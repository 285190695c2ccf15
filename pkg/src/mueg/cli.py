"""Batch front-end: construct / verify / tile / ueg-scan / acceptance.

Jobs are driven by a line-oriented ``key = value`` config with ``[section]``
headers (no nesting).  Every report embeds the config hash and the RNG seed,
and repeated runs with the same config and seed reproduce reports exactly.
Exit codes: 0 all checks passed, 1 at least one check failed, 2 usage or
parse errors.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from pathlib import Path

import numpy as np

from . import acceptance as acceptance_mod
from . import constructor as cons
from . import fields, kernels, rdm, tiling, ueg
from .report import BoundReport

__all__ = ["main", "parse_config", "JobConfig"]


class ConfigError(ValueError):
    pass


def parse_config(text: str) -> dict[str, dict[str, str]]:
    """Parse `key = value` lines with [section] headers."""
    out: dict[str, dict[str, str]] = {}
    section = "global"
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            out.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {raw!r}")
        key, val = line.split("=", 1)
        out.setdefault(section, {})[key.strip()] = val.strip()
    return out


class JobConfig:
    """Config plus resolved common options (seed, output dir, workers)."""

    def __init__(self, sections: dict[str, dict[str, str]], text: str,
                 seed: int, out_dir: Path, workers: int, strict_vorticity: bool):
        self.sections = sections
        self.config_hash = hashlib.sha256(text.encode()).hexdigest()[:16]
        self.seed = seed
        self.out_dir = out_dir
        self.workers = workers
        self.strict_vorticity = strict_vorticity

    def get(self, section: str, key: str, default=None) -> str | None:
        return self.sections.get(section, {}).get(key, default)

    def get_float(self, section, key, default=None):
        v = self.get(section, key)
        return default if v is None else float(v)

    def get_int(self, section, key, default=None):
        v = self.get(section, key)
        return default if v is None else int(v)

    def get_floats(self, section, key, default=()):
        v = self.get(section, key)
        if v is None:
            return tuple(default)
        return tuple(float(p) for p in v.replace(",", " ").split())

    def header_lines(self) -> list[str]:
        return [
            f"config_hash = {self.config_hash}",
            f"seed = {self.seed}",
        ]


def _write_report(cfg: JobConfig, name: str, body: str) -> Path:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.out_dir / name
    with open(path, "w") as fh:
        fh.write("\n".join(cfg.header_lines()) + "\n" + body)
    return path


def _field_callables(path: str):
    """Cubic interpolators for a sampled field so the constructor can probe
    it off-lattice; gradients come from the package stencils, interpolated."""
    from scipy.interpolate import RegularGridInterpolator

    f = fields.read_field(path)
    grid = f.grid
    axes = [grid.axis(i) for i in range(grid.dim)]

    def interp(values):
        return RegularGridInterpolator(
            axes, values.real.astype(float), method="cubic",
            bounds_error=False, fill_value=0.0,
        )

    if isinstance(f, fields.ScalarField):
        base = interp(f.values)
        gradf = fields.gradient(f)
        comps = [interp(gradf.values[..., i]) for i in range(grid.dim)]

        def fn(p):
            return base(p)

        def grad(p):
            return np.stack([c(p) for c in comps], axis=-1)

        return f, fn, grad
    if isinstance(f, fields.VectorField):
        comps = [interp(f.values[..., i]) for i in range(grid.dim)]
        jac = fields.jacobian(f)
        jcomps = [[interp(jac.values[..., i, j]) for j in range(grid.dim)]
                  for i in range(grid.dim)]

        def fn(p):
            return np.stack([c(p) for c in comps], axis=-1)

        def jfn(p):
            return np.stack(
                [np.stack([jc(p) for jc in row], axis=-1) for row in jcomps], axis=-2
            )

        return f, fn, jfn
    raise ConfigError(f"unsupported field kind in {path}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_construct(cfg: JobConfig) -> int:
    sec = "construct"
    rho_path = cfg.get(sec, "rho")
    if rho_path is None:
        raise ConfigError("[construct] needs rho = <field file>")
    rho_field, rho_fn, rho_grad = _field_callables(rho_path)
    w_path = cfg.get(sec, "w")
    if w_path is not None:
        _, w_fn, w_jac = _field_callables(w_path)
        dec = cons.CurrentDecomposition(None, w_fn, w_jac)
    else:
        dec = cons.CurrentDecomposition.zero(rho_field.grid.dim)
    g_path = cfg.get(sec, "g")
    if g_path is not None:
        _, g_fn, g_grad = _field_callables(g_path)
        dec = dec.with_gauge(rdm.GaugeFunction(g_fn, g_grad))
    spec = cons.ConstructorSpec(
        theta_width=cfg.get_float(sec, "theta_width"),
        theta_floor=cfg.get_float(sec, "theta_floor", 1e-3),
        t_order=cfg.get_int(sec, "t_order", 64),
        u_order=cfg.get_int(sec, "u_order", 16),
    )
    grid = rho_field.grid
    probes = grid.points()[:: max(1, grid.n_points // 64)]
    crdm = cons.build_rdm(rho_fn, dec, spec, dim=grid.dim, rho_grad=rho_grad,
                          probe_points=probes)
    marg = cons.verify_marginals(crdm, grid.points()[:: max(1, grid.n_points // 512)],
                                 tol=cfg.get_float(sec, "marginal_tol", 1e-6))
    ledger = cons.kinetic_bound_ledger(
        crdm, grid, fd_stride=cfg.get_int(sec, "fd_stride", 7)
    )
    _write_report(cfg, "marginals.txt", marg.to_text())
    _write_report(cfg, "ledger.txt", ledger.to_text())
    if cfg.get(sec, "kernel_dump") is not None:
        center = np.zeros((grid.n_points, grid.dim))
        center += np.mean(grid.points(), axis=0)
        row = crdm.kernel(center, grid.points())
        dump = fields.ScalarField(grid, row.reshape(grid.counts, order="F"))
        fields.write_field(cfg.out_dir / "kernel_row.field", dump)
    ok = marg.passed and ledger.passed
    print(f"construct: marginals {'pass' if marg.passed else 'FAIL'}, "
          f"ledger {'pass' if ledger.passed else 'FAIL'}")
    return 0 if ok else 1


def _verify_corpus(cfg: JobConfig, n_sets: int = 20, n_orb: int = 4):
    rng = np.random.default_rng(cfg.seed)
    grid = fields.GridSpec.cube(3, -4.0, 4.0, 24)
    return [rdm.random_orbital_set(rng, 1 + int(rng.integers(n_orb)), grid)
            for _ in range(n_sets)]


def _cmd_verify(cfg: JobConfig, suite: str) -> int:
    reports: list[BoundReport] = []
    corpus = _verify_corpus(cfg)
    for i, lr in enumerate(corpus):
        obs = lr.observables()
        if suite in ("pointwise", "all"):
            reports.append(rdm.check_pointwise_bounds(obs))
        if suite in ("integrated", "all"):
            reports.append(rdm.check_integrated_bound(obs, lr.kinetic_energy()))
            if cfg.strict_vorticity:
                reports.append(
                    rdm.check_integrated_bound(obs, lr.kinetic_energy(), strict=True)
                )
    body = "\n".join(r.to_text() for r in reports)
    _write_report(cfg, f"verify_{suite}.txt", body)
    n_fail = sum(not r.passed for r in reports)
    print(f"verify --suite {suite}: {len(reports) - n_fail}/{len(reports)} checks pass")
    return 0 if n_fail == 0 else 1


def _cmd_tile(cfg: JobConfig) -> int:
    sec = "tile"
    dec = tiling.build_decomposition()
    ell = cfg.get_float(sec, "ell", 1.0)
    delta = cfg.get_float(sec, "delta", 0.4)
    ratio = cfg.get_float(sec, "target_ratio", 8.0)
    target = tiling.ConvexPolytope.tetrahedron(dec.reference * (ratio * ell))
    cls = tiling.classify_indices(target, dec, ell, delta, delta)
    rng = np.random.default_rng(cfg.seed)
    pts = rng.uniform(-0.5 * ell, 0.5 * ell, size=(cfg.get_int(sec, "mc_points", 20000), 3))
    sums, on_face = tiling.pou_indicator_sum(pts, dec, ell)
    pou = tiling.pou_regularized_average(
        np.zeros(3), dec, ell, min(delta, ell / 2), sampling=("exact",)
    )
    lines = [
        "report = tiling",
        f"ell = {ell:.17g}",
        f"delta = {delta:.17g}",
        f"n_J = {cls.n_J}",
        f"n_J0 = {cls.n_J0}",
        f"covered_volume = {cls.covered_volume:.17g}",
        f"boundary_volume = {cls.boundary_volume:.17g}",
        f"target_volume = {target.volume():.17g}",
        f"pou_indicator_exact = {float(np.all(sums[~on_face] == 1.0))}",
        f"pou_face_fraction = {float(np.mean(on_face)):.17g}",
        f"pou_regularized_residual = {abs(pou['estimate'] - 1.0):.17g}",
    ]
    _write_report(cfg, "tile.txt", "\n".join(lines) + "\n")
    if cfg.get(sec, "mesh") is not None:
        mesh_lines = ["OFF", f"{24 * 4} {24 * 4} 0"]
        for j in range(24):
            for v in dec.image_vertices(j, ell):
                mesh_lines.append(" ".join(f"{c:.17g}" for c in v))
        for j in range(24):
            base = 4 * j
            for tri in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
                mesh_lines.append("3 " + " ".join(str(base + t) for t in tri))
        (cfg.out_dir / "tiles.off").write_text("\n".join(mesh_lines) + "\n")
    ok = bool(np.all(sums[~on_face] == 1.0)) and abs(pou["estimate"] - 1.0) < 1e-8
    print(f"tile: J={cls.n_J} J0={cls.n_J0} pou_residual={abs(pou['estimate']-1):.2e}")
    return 0 if ok else 1


def _cmd_ueg_scan(cfg: JobConfig) -> int:
    sec = "ueg-scan"
    rho0 = cfg.get_float(sec, "rho0", 1.0)
    nu0 = cfg.get_floats(sec, "nu0", (0.0, 0.0, 1.0))
    scales = cfg.get_floats(sec, "scales", (4.0, 8.0, 16.0, 32.0))
    delta_policy = cfg.get(sec, "delta_policy", "fixed")
    delta0 = cfg.get_float(sec, "delta", 1.0)
    domain_kind = cfg.get(sec, "domain", "box")
    dec = tiling.build_decomposition()
    grid_n = cfg.get_int(sec, "grid_n", 24)
    rows = []
    for ell in scales:
        if delta_policy == "fixed":
            delta = delta0
        elif delta_policy == "scaled":
            # width shrinking like scale^(-1/3) * rho0^(-4/9)
            delta = ell ** (-1.0 / 3.0) * rho0 ** (-4.0 / 9.0) * delta0
        else:
            raise ConfigError(f"unknown delta_policy {delta_policy!r}")
        if domain_kind == "box":
            dom = tiling.ConvexPolytope.box([-0.5 * ell] * 3, [0.5 * ell] * 3)
        elif domain_kind == "tetra":
            dom = tiling.ConvexPolytope.tetrahedron(dec.reference * ell)
        else:
            raise ConfigError(f"unknown domain {domain_kind!r}")
        trial = ueg.build_trial(rho0, nu0, dom, delta, grid_n=grid_n)
        rep = ueg.surrogate_energies(trial)
        rows.append((ell, delta, rep))
    hdr = ("scale\tdelta\tkinetic_per_volume\ttf\tweizsacker\tgauge_correction"
           "\tstrain\tfloor\tgauge_corrected\teps")
    body = [hdr]
    for ell, delta, rep in rows:
        body.append(
            f"{ell:g}\t{delta:.6g}\t{rep.kinetic_per_volume:.10g}\t{rep.tf_per_volume:.10g}"
            f"\t{rep.weizsacker_per_volume:.10g}\t{rep.gauge_correction_per_volume:.10g}"
            f"\t{rep.strain_per_volume:.10g}\t{rep.floor_per_volume:.10g}"
            f"\t{rep.gauge_corrected_per_volume:.10g}\t{rep.eps:g}"
        )
    _write_report(cfg, "ueg_scan.tsv", "\n".join(body) + "\n")
    scan = ueg.gauge_term_scan(rho0, nu0, tiling.ConvexPolytope.box([-0.5] * 3, [0.5] * 3),
                               delta0, scales, grid_n=max(grid_n, 32))
    if not scan["skipped"]:
        print(f"ueg-scan: gauge-term growth exponent {scan['exponent']:.4f}")
        _write_report(
            cfg, "gauge_growth.txt",
            f"exponent = {scan['exponent']:.17g}\nprefactor = {scan['prefactor']:.17g}\n",
        )
        return 0 if abs(scan["exponent"] - 2.0) < 0.05 else 1
    print("ueg-scan: zero swirl, growth fit skipped")
    return 0


def _cmd_acceptance(cfg: JobConfig) -> int:
    results = acceptance_mod.run_all(seed=cfg.seed, strict=True)
    lines = []
    n_fail = 0
    for res in results:
        status = "pass" if res.passed else "FAIL"
        line = f"[{status}] criterion {res.number:2d}: {res.name} ({res.elapsed:.1f}s) {res.detail}"
        print(line)
        lines.append(line)
        n_fail += not res.passed
    _write_report(cfg, "acceptance.txt", "\n".join(lines) + "\n")
    print(f"acceptance: {len(results) - n_fail}/{len(results)} criteria pass")
    return 0 if n_fail == 0 else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mueg",
        description="numerical checks for magnetic current-density functional theory",
    )
    parser.add_argument("--config", type=Path, default=None, help="job config file")
    parser.add_argument("--seed", type=int, default=None, help="RNG seed")
    parser.add_argument("--workers", type=int, default=1,
                        help="worker hint; evaluation is vectorized and deterministic")
    parser.add_argument("--out", type=Path, default=Path("mueg-out"))
    parser.add_argument("--strict-vorticity", action="store_true",
                        help="also check the improved vorticity constant 1")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("construct")
    p_verify = sub.add_parser("verify")
    p_verify.add_argument("--suite", choices=["pointwise", "integrated", "all"],
                          default="all")
    sub.add_parser("tile")
    sub.add_parser("ueg-scan")
    sub.add_parser("acceptance")

    args = parser.parse_args(argv)
    text = ""
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as exc:
            print(f"error: cannot read config: {exc}", file=sys.stderr)
            return 2
    try:
        sections = parse_config(text)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    seed = args.seed
    if seed is None:
        seed = int(sections.get("global", {}).get("seed", 0))
    cfg = JobConfig(sections, text, seed, args.out, args.workers, args.strict_vorticity)

    try:
        if args.command == "construct":
            return _cmd_construct(cfg)
        if args.command == "verify":
            return _cmd_verify(cfg, args.suite)
        if args.command == "tile":
            return _cmd_tile(cfg)
        if args.command == "ueg-scan":
            return _cmd_ueg_scan(cfg)
        if args.command == "acceptance":
            return _cmd_acceptance(cfg)
    except (ConfigError, fields.FieldIOError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (cons.DegenerateInputError, cons.QuadratureDefect, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
