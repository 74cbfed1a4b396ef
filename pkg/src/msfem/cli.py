"""Batch harness: single solves, convergence sweeps, strategy comparison,
and corrector decay probes, all emitting CSV.

Configuration comes from ``key = value`` text files and/or command-line
flags; flags win.  Outputs are deterministic for a given configuration
except for the runtime column.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import dataclass, fields, replace
from typing import Optional, Sequence

import numpy as np

from . import analysis, coarse, correctors, fem, mesh, patches, problems
from .interpolation import QuasiInterpolator

CSV_HEADER = (
    "problem,H,h,fine_layers,k,strategy,formulation,err_l2,err_h1_semi,"
    "err_h1_full,err_coarse_l2,dofs_coarse,dofs_fine,status,runtime_ms"
)
DECAY_HEADER = (
    "problem,H,h,element,direction,k,tail_energy,trunc_energy,rate,"
    "fit_residual,status"
)


@dataclass
class StudyConfig:
    problem: str = "section5"
    gamma: float = 1.0
    coarse: int = 8
    fine: int = 64
    strategy: int = 3
    formulation: Optional[str] = None     # default: symmetric for 3, pg else
    layers_fine: Optional[int] = None
    layers_coarse: Optional[int] = None
    maximal: bool = False
    tol: float = 1e-12
    quadrature: str = "centroid"
    rhs_variant: str = "corrected"
    constraints: str = "inside"
    output: Optional[str] = None
    parallel: int = 0                     # 0 = all available cores
    sweep: Optional[str] = None
    kmax: Optional[int] = None
    dump_solution: Optional[str] = None
    dump_correctors: Optional[str] = None

    def resolved_formulation(self) -> str:
        if self.formulation is not None:
            return self.formulation
        return "symmetric" if self.strategy == 3 else "pg"

    def resolved_parallel(self) -> int:
        return self.parallel if self.parallel > 0 else (os.cpu_count() or 1)

    def validate(self) -> None:
        if self.fine % self.coarse != 0:
            raise ValueError("fine subdivision must be divisible by the coarse one")
        ratio = self.fine // self.coarse
        if ratio & (ratio - 1):
            raise ValueError("fine/coarse ratio must be a power of two")
        if self.strategy not in (1, 2, 3):
            raise ValueError("strategy must be 1, 2 or 3")
        if self.resolved_formulation() not in ("pg", "symmetric"):
            raise ValueError("formulation must be 'pg' or 'symmetric'")
        given = sum(
            x is not None for x in (self.layers_fine, self.layers_coarse)
        ) + bool(self.maximal)
        if given > 1:
            raise ValueError(
                "give at most one of layers_fine, layers_coarse, maximal"
            )


@dataclass
class StudyRecord:
    """One experiment row of the harness."""

    problem: str
    coarse_h: float
    fine_h: float
    fine_layers: Optional[float]
    k: Optional[float]
    strategy: int
    formulation: str
    status: str
    runtime_ms: int
    errors: Optional[analysis.ErrorReport] = None
    dofs_coarse: int = 0
    dofs_fine: int = 0
    maximal: bool = False

    def csv_row(self) -> str:
        def num(x):
            if x is None:
                return ""
            return format(float(x), ".12g")

        err = self.errors
        parts = [
            self.problem,
            num(self.coarse_h),
            num(self.fine_h),
            "" if self.maximal else num(self.fine_layers),
            "max" if self.maximal else num(self.k),
            str(self.strategy),
            self.formulation,
            num(err.l2_error) if err else "",
            num(err.broken_h1_error) if err else "",
            num(err.h1_full_error) if err else "",
            num(err.coarse_l2_error) if err else "",
            str(self.dofs_coarse),
            str(self.dofs_fine),
            self.status,
            str(self.runtime_ms),
        ]
        return ",".join(parts)


class StudyContext:
    """Shared state of one harness invocation: meshes, assembly, reference.

    Corrector bases are cached by (strategy, layer descriptor) so that
    comparisons and repeated formulations do not repeat local solves.
    """

    def __init__(self, config: StudyConfig):
        config.validate()
        self.config = config
        ratio = config.fine // config.coarse
        self.levels = ratio.bit_length() - 1
        self.problem = self._make_problem(config)
        self.hier = mesh.refine_uniform(
            mesh.build_uniform_mesh(config.coarse), self.levels
        )
        self.asm = fem.Assembly(
            self.hier.fine, self.problem.coefficient, self.problem.source,
            config.quadrature,
        )
        self.reference = fem.solve_spd(self.asm.reduced_system(), tol=config.tol)
        self._interpolator: Optional[QuasiInterpolator] = None
        self._basis_cache: dict = {}

    @staticmethod
    def _make_problem(config: StudyConfig) -> problems.ProblemInstance:
        if config.problem == "constant":
            return problems.get_problem("constant", gamma=config.gamma)
        return problems.get_problem(config.problem)

    @property
    def interpolator(self) -> QuasiInterpolator:
        if self._interpolator is None:
            self._interpolator = QuasiInterpolator(self.hier)
        return self._interpolator

    def patch_family(self, layers_fine=None, layers_coarse=None, maximal=False):
        return patches.build_patches(
            self.hier, layers_fine=layers_fine,
            layers_coarse=layers_coarse, maximal=maximal,
        )

    def basis(self, strategy: int, layers_fine=None, layers_coarse=None,
              maximal=False) -> correctors.CorrectorBasis:
        key = (strategy, layers_fine, layers_coarse, maximal)
        if key not in self._basis_cache:
            family = self.patch_family(layers_fine, layers_coarse, maximal)
            interp = self.interpolator if strategy == 3 else None
            self._basis_cache[key] = correctors.compute_corrector_basis(
                self.asm, self.hier, strategy, family, interpolator=interp,
                parallel=self.config.resolved_parallel(),
                constraint_scope=self.config.constraints,
            )
        return self._basis_cache[key]


def _layer_summary(config: StudyConfig, ratio: int):
    if config.maximal:
        return None, None
    if config.layers_coarse is not None:
        return config.layers_coarse * ratio, float(config.layers_coarse)
    if config.layers_fine is not None:
        return config.layers_fine, config.layers_fine / ratio
    return 2 * ratio, 2.0  # default: two coarse layers


def run_solve(config: StudyConfig, context: Optional[StudyContext] = None) -> StudyRecord:
    """Full pipeline for one configuration; failures land in the record."""
    start = time.perf_counter()
    ratio = config.fine // config.coarse
    fine_layers, k = _layer_summary(config, ratio)
    record = StudyRecord(
        problem=config.problem,
        coarse_h=1.0 / config.coarse,
        fine_h=1.0 / config.fine,
        fine_layers=fine_layers,
        k=k,
        strategy=config.strategy,
        formulation=config.resolved_formulation(),
        status="ok",
        runtime_ms=0,
        maximal=config.maximal,
    )

    stage = "setup"
    try:
        if context is None:
            context = StudyContext(config)
        record.dofs_fine = int((~context.hier.fine.boundary_vertices).sum())
        record.dofs_coarse = int((~context.hier.coarse.boundary_vertices).sum())

        stage = "correctors"
        layers_fine = config.layers_fine
        layers_coarse = config.layers_coarse
        if layers_fine is None and layers_coarse is None and not config.maximal:
            layers_coarse = 2
        basis = context.basis(
            config.strategy, layers_fine, layers_coarse, config.maximal
        )

        stage = "coarse"
        if config.resolved_formulation() == "pg":
            solution = coarse.solve_pg(basis, context.asm, tol=config.tol)
        else:
            solution = coarse.solve_symmetric(
                basis, context.asm, rhs_variant=config.rhs_variant, tol=config.tol
            )

        stage = "errors"
        record.errors = analysis.error_norms(
            context.reference, solution, context.hier
        )

        stage = "dump"
        if config.dump_solution:
            _dump_solution(config.dump_solution, solution)
        if config.dump_correctors:
            _dump_correctors(config.dump_correctors, basis)
    except Exception as exc:  # recorded, not raised: the row carries the stage
        record.status = f"failed:{stage}"
        print(f"[msfem] {record.status}: {exc}", file=sys.stderr)

    record.runtime_ms = int(1000 * (time.perf_counter() - start))
    return record


def _dump_solution(path: str, solution: coarse.MsfemSolution) -> None:
    with open(path, "w") as fh:
        if solution.is_conforming:
            fh.write(f"conforming {len(solution.corrected.values)}\n")
            for v in solution.corrected.values:
                fh.write(f"{v:.17g}\n")
        else:
            vals = solution.corrected.values
            fh.write(f"elementwise {vals.shape[0]}\n")
            for row in vals:
                fh.write(f"{row[0]:.17g} {row[1]:.17g} {row[2]:.17g}\n")


def _dump_correctors(directory: str, basis: correctors.CorrectorBasis) -> None:
    os.makedirs(directory, exist_ok=True)
    for T in range(basis.hier.coarse.num_triangles):
        for i in (0, 1):
            path = os.path.join(directory, f"corrector_T{T}_e{i}.txt")
            with open(path, "w") as fh:
                for v in basis.vectors[T, i]:
                    fh.write(f"{v:.17g}\n")


def _parse_sweep(spec: str) -> list[tuple[int, int]]:
    out = []
    for item in spec.split(","):
        coarse_n, _, layers = item.strip().partition(":")
        if not layers:
            raise ValueError(
                f"sweep items must look like coarse_n:fine_layers, got {item!r}"
            )
        out.append((int(coarse_n), int(layers)))
    return out


def run_convergence(config: StudyConfig) -> tuple[list[StudyRecord], list[str]]:
    """One record per sweep point plus slope summary rows."""
    if not config.sweep:
        raise ValueError("convergence runs need a sweep, e.g. '4:24,8:16,16:16'")
    points = _parse_sweep(config.sweep)
    if len(points) < 3:
        raise ValueError("need at least 3 sweep points for a rate fit")
    records = []
    for coarse_n, layers in points:
        sub = replace(config, coarse=coarse_n, layers_fine=layers,
                      layers_coarse=None, maximal=False, sweep=None)
        records.append(run_solve(sub))

    extra_rows = []
    good = [r for r in records if r.status == "ok" and r.errors is not None]
    if len(good) >= 3:
        hs = [r.coarse_h for r in good]
        slopes = {
            "l2": analysis.fit_rate(hs, [r.errors.l2_error for r in good]),
            "h1": analysis.fit_rate(hs, [r.errors.broken_h1_error for r in good]),
            "h1_full": analysis.fit_rate(hs, [r.errors.h1_full_error for r in good]),
            "coarse_l2": analysis.fit_rate(hs, [r.errors.coarse_l2_error for r in good]),
        }
        num = lambda x: format(x, ".12g")
        extra_rows.append(
            f"{config.problem}:slope,,,,,"
            f"{config.strategy},{records[0].formulation},"
            f"{num(slopes['l2'])},{num(slopes['h1'])},{num(slopes['h1_full'])},"
            f"{num(slopes['coarse_l2'])},,,ok,"
        )
    return records, extra_rows


def run_compare(config: StudyConfig) -> list[StudyRecord]:
    """Strategies 1 and 2 (petrov-galerkin) and 3 (symmetric), one context."""
    context = StudyContext(replace(config, strategy=3))
    records = []
    for strategy in (1, 2, 3):
        sub = replace(config, strategy=strategy, formulation=None, sweep=None)
        records.append(run_solve(sub, context=context))
    return records


def sample_interior_elements(hier: mesh.RefinementHierarchy, count: int) -> np.ndarray:
    """Deterministic central elements with no vertex on the boundary."""
    coarse_mesh = hier.coarse
    has_boundary_vertex = coarse_mesh.boundary_vertices[coarse_mesh.triangles].any(axis=1)
    candidates = np.flatnonzero(~has_boundary_vertex)
    if candidates.size == 0:
        raise ValueError("mesh too coarse: no interior elements")
    centroids = coarse_mesh.vertices[coarse_mesh.triangles[candidates]].mean(axis=1)
    dist = np.linalg.norm(centroids - 0.5, axis=1)
    order = np.lexsort((candidates, dist))
    return candidates[order][:count]


def run_decay(config: StudyConfig, samples: int = 5) -> tuple[list[str], bool]:
    """Tail-energy and truncation-error rows for sampled elements."""
    context = StudyContext(replace(config, strategy=3, maximal=True,
                                   layers_fine=None, layers_coarse=None))
    hier = context.hier
    elements = sample_interior_elements(hier, samples)
    maximal_basis = context.basis(3, maximal=True)

    if config.kmax is not None:
        k_max = config.kmax
    else:
        k_max = 1
        while len(mesh.coarse_element_patch(hier, int(elements[0]), k_max)) < \
                hier.coarse.num_triangles:
            k_max += 1

    rows = []
    ok = True
    num = lambda x: format(float(x), ".12g")
    for T in elements:
        T = int(T)
        truncated = {}
        for k in range(1, k_max + 1):
            patch = patches.patch_from_coarse_layers(hier, T, k)
            block = context.interpolator.build_constraints(patch)
            w0, w1, _ = correctors.solve_corrector_strategy3(
                context.asm, hier, patch, block
            )
            truncated[k] = (w0, w1)
        for i in (0, 1):
            profile = analysis.decay_profile(
                hier, context.asm.aloc, maximal_basis.vectors[T, i], T, i, k_max
            )
            status = "zero" if profile.flagged_zero else "ok"
            for k in range(k_max + 1):
                if k == 0:
                    trunc = ""
                else:
                    diff = fem.FeFunction(
                        hier.fine,
                        maximal_basis.vectors[T, i] - truncated[k][i],
                    )
                    trunc = num(analysis.weighted_h1_seminorm(
                        hier.fine, diff, context.asm.aloc
                    ))
                rate = "" if np.isnan(profile.rate) else num(profile.rate)
                rows.append(
                    f"{config.problem},{num(1.0 / config.coarse)},"
                    f"{num(1.0 / config.fine)},{T},{i},{k},"
                    f"{num(profile.energies[k])},{trunc},{rate},"
                    f"{num(profile.fit_residual)},{status}"
                )
    return rows, ok


def _emit(lines: Sequence[str], output: Optional[str]) -> None:
    text = "\n".join(lines) + "\n"
    if output:
        with open(output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _config_from_file(path: str) -> dict:
    values = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            key, eq, raw = body.partition("=")
            if not eq:
                raise ValueError(f"{path}:{line_no}: expected 'key = value'")
            values[key.strip().replace("-", "_")] = raw.strip()
    return values


_INT_KEYS = {"coarse", "fine", "strategy", "layers_fine", "layers_coarse",
             "parallel", "kmax"}
_FLOAT_KEYS = {"tol", "gamma"}
_BOOL_KEYS = {"maximal"}


def _coerce(key: str, raw: str):
    if key in _INT_KEYS:
        return int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    if key in _BOOL_KEYS:
        return raw.lower() in ("1", "true", "yes", "on")
    return raw


def build_config(args: argparse.Namespace) -> StudyConfig:
    config = StudyConfig()
    if getattr(args, "config", None):
        for key, raw in _config_from_file(args.config).items():
            if key not in {f.name for f in fields(StudyConfig)}:
                raise ValueError(f"unknown config key {key!r}")
            setattr(config, key, _coerce(key, raw))
    for f in fields(StudyConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(config, f.name, value)
    return config


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--problem", choices=sorted(problems.PROBLEMS))
    p.add_argument("--gamma", type=float, help="coefficient of the constant problem")
    p.add_argument("--coarse", type=int, help="coarse subdivisions per side")
    p.add_argument("--fine", type=int, help="fine subdivisions per side")
    p.add_argument("--strategy", type=int, choices=(1, 2, 3))
    p.add_argument("--formulation", choices=("pg", "symmetric"))
    p.add_argument("--layers-fine", dest="layers_fine", type=int)
    p.add_argument("--layers-coarse", dest="layers_coarse", type=int)
    p.add_argument("--maximal", action="store_const", const=True, default=None,
                   help="use the whole domain as every patch")
    p.add_argument("--tol", type=float, help="linear solver tolerance")
    p.add_argument("--quadrature", choices=fem.QUADRATURE_RULES)
    p.add_argument("--rhs-variant", dest="rhs_variant",
                   choices=coarse.RHS_VARIANTS)
    p.add_argument("--constraints", choices=("inside", "overlap"),
                   help="kernel constraint scope for strategy 3")
    p.add_argument("--output", help="CSV output path (default stdout)")
    p.add_argument("--parallel", type=int,
                   help="worker processes for corrector solves (0 = all cores)")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="msfem",
        description="multiscale finite element studies on the unit square",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="single multiscale solve")
    _add_common(p_solve)
    p_solve.add_argument("--dump-solution", dest="dump_solution")
    p_solve.add_argument("--dump-correctors", dest="dump_correctors")

    p_conv = sub.add_parser("convergence", help="sweep over coarse mesh sizes")
    _add_common(p_conv)
    p_conv.add_argument("--sweep", help="comma list of coarse_n:fine_layers")

    p_cmp = sub.add_parser("compare", help="strategies side by side")
    _add_common(p_cmp)

    p_decay = sub.add_parser("decay", help="corrector decay probe")
    _add_common(p_decay)
    p_decay.add_argument("--kmax", type=int, help="largest neighborhood radius")
    p_decay.add_argument("--samples", type=int, default=5)

    p_dump = sub.add_parser("dump-mesh", help="write a mesh in text form")
    p_dump.add_argument("--n", type=int, required=True)
    p_dump.add_argument("--output", help="path (default stdout)")

    args = parser.parse_args(argv)

    if args.command == "dump-mesh":
        m = mesh.build_uniform_mesh(args.n)
        if args.output:
            with open(args.output, "w") as fh:
                mesh.write_mesh(m, fh)
        else:
            mesh.write_mesh(m, sys.stdout)
        return 0

    config = build_config(args)

    if args.command == "solve":
        record = run_solve(config)
        _emit([CSV_HEADER, record.csv_row()], config.output)
        return 0 if record.status == "ok" else 1

    if args.command == "convergence":
        records, extra = run_convergence(config)
        lines = [CSV_HEADER] + [r.csv_row() for r in records] + extra
        _emit(lines, config.output)
        return 0 if all(r.status == "ok" for r in records) else 1

    if args.command == "compare":
        records = run_compare(config)
        _emit([CSV_HEADER] + [r.csv_row() for r in records], config.output)
        return 0 if all(r.status == "ok" for r in records) else 1

    if args.command == "decay":
        rows, ok = run_decay(config, samples=args.samples)
        _emit([DECAY_HEADER] + rows, config.output)
        return 0 if ok else 1

    parser.error(f"unknown command {args.command}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
