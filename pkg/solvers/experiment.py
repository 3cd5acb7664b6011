"""Experiment configuration and the per-level driver behind `bangbang run`."""

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

from solvers.errors import ConfigError, ExportError, FactorizationError, NonConvergenceError
from solvers.fem import build_problem
from solvers.lqnewton import FixedPointConfig, LQConfig, fixed_point_solve, solve_linear_quadratic
from solvers.mesh import build_uniform_mesh
from solvers.trnewton import TRConfig, trust_region_solve
from tools.exporters import export_control_field, write_table_csv, write_trace_csv
from utils.run_tracker import LevelRecord, RunCounters, RunReport
from utils.trace_enrichment import SolverTraceHook

logger = logging.getLogger(__name__)

CASES = ('linear', 'semilinear', 'fixed-point')
SOLVERS = ('semismooth', 'trust-region')


@dataclass(frozen=True)
class ExperimentConfig:
    case: str = 'linear'
    u_b: float = 50.0
    alpha: float = 0.0
    levels: Tuple[int, ...] = (8, 16, 32, 64, 128)
    # None selects the solver's own default
    tolerance: Optional[float] = None
    max_iterations: Optional[int] = None
    output_dir: str = 'results'
    solver: Optional[str] = None
    record_timings: bool = True
    export_fields: bool = True
    fixed_iterations: Optional[int] = None
    description: str = field(default='', compare=False)

    def __post_init__(self):
        object.__setattr__(self, 'levels', tuple(self.levels))
        if self.case not in CASES:
            raise ConfigError(f"case must be one of {', '.join(CASES)}, got {self.case!r}")
        if not self.u_b > 0:
            raise ConfigError(f"u_b must be positive, got {self.u_b}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be nonnegative, got {self.alpha}")
        if self.case in ('linear', 'fixed-point') and self.alpha != 0:
            raise ConfigError(f"case {self.case} requires alpha = 0")
        if not self.levels:
            raise ConfigError("levels must not be empty")
        if any(not isinstance(n, int) or isinstance(n, bool) or n < 1 for n in self.levels):
            raise ConfigError(f"levels must be positive integers, got {list(self.levels)}")
        if any(a >= b for a, b in zip(self.levels, self.levels[1:])):
            raise ConfigError(f"levels must be strictly ascending, got {list(self.levels)}")
        if self.solver is not None and self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {', '.join(SOLVERS)}, got {self.solver!r}")
        if self.case == 'semilinear' and self.solver == 'semismooth':
            raise ConfigError("the semilinear case is solved by the trust-region method only")
        if self.tolerance is not None and self.tolerance <= 0:
            raise ConfigError("tolerance must be positive")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ConfigError("max_iterations must be positive")
        if self.fixed_iterations is not None and self.fixed_iterations < 1:
            raise ConfigError("fixed_iterations must be positive")

    @property
    def resolved_solver(self) -> str:
        if self.case == 'fixed-point':
            return 'fixed-point'
        if self.solver is not None:
            return self.solver
        return 'semismooth' if self.case == 'linear' else 'trust-region'

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['levels'] = list(self.levels)
        return data


def load_config(
    path=None,
    overrides: Optional[Dict[str, Any]] = None,
    defaults: Optional[Dict[str, Any]] = None,
) -> ExperimentConfig:
    """
    Read an experiment JSON file and apply overrides.

    Precedence is overrides, then the file, then defaults. Values of None
    are ignored; unknown keys are rejected.
    """
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            with open(path, 'r') as f:
                data = json.load(f)
        except OSError as e:
            raise ConfigError(f"{path}: {e.strerror or e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")

    data = {**{k: v for k, v in (defaults or {}).items() if v is not None}, **data}
    data.update({key: value for key, value in (overrides or {}).items() if value is not None})

    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    if 'levels' in data and not isinstance(data['levels'], (list, tuple)):
        raise ConfigError("levels must be a list of integers")
    try:
        return ExperimentConfig(**data)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def solve_level(config: ExperimentConfig, n: int, counters: RunCounters, on_iteration=None):
    """Build mesh and problem for one level and run the configured solver."""
    mesh = build_uniform_mesh(n)
    problem = build_problem(mesh, config.u_b, config.alpha)
    solver = config.resolved_solver

    if solver == 'fixed-point':
        options = {k: v for k, v in (('tolerance', config.tolerance),
                                     ('max_iterations', config.max_iterations)) if v is not None}
        record = fixed_point_solve(mesh, problem, FixedPointConfig(**options), on_iteration, counters)
    elif solver == 'semismooth':
        options = {k: v for k, v in (('tolerance', config.tolerance),
                                     ('max_iterations', config.max_iterations),
                                     ('fixed_iterations', config.fixed_iterations)) if v is not None}
        record = solve_linear_quadratic(mesh, problem, LQConfig(**options), on_iteration, counters)
    else:
        options = {}
        if config.tolerance is not None:
            options.update(gradient_tolerance=config.tolerance, load_tolerance=config.tolerance)
        if config.max_iterations is not None:
            options['max_outer'] = config.max_iterations
        record = trust_region_solve(mesh, problem, TRConfig(**options), on_iteration, counters)
    return mesh, record


def run_experiment(
    config: ExperimentConfig,
    hook: Optional[SolverTraceHook] = None,
    on_level: Optional[Callable[[LevelRecord], None]] = None,
) -> RunReport:
    """
    Run every level of the experiment and write its outputs.

    Writes `table.csv`, `report.json`, `trace_n<level>.csv` and, when
    `export_fields` is set, `control_n<level>.vtk` into `config.output_dir`.
    Inner solver failures become rows with converged=False; only I/O
    problems raise (ExportError).
    """
    hook = hook or SolverTraceHook()
    output = Path(config.output_dir)
    try:
        output.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ExportError(output, e.strerror or str(e)) from e

    report = RunReport(config=config.to_dict())
    for n in config.levels:
        counters = RunCounters()
        start = time.perf_counter()
        with hook.level(config.case, n, (n + 1) ** 2, config.u_b, config.alpha):
            try:
                mesh, record = solve_level(config, n, counters, hook.on_iteration)
            except (NonConvergenceError, FactorizationError) as e:
                logger.error("level n=%d failed: %s", n, e)
                mesh = None
                record = LevelRecord(case=config.case, n=n, nodes=(n + 1) ** 2, u_bound=config.u_b)
                record.warnings.append(str(e))
                record.finish(counters, time.perf_counter() - start)
            record.case = config.case
            hook.record_outcome(record)

        report.add(record)
        write_trace_csv(record.trace, output / f"trace_n{n}.csv")
        if config.export_fields and mesh is not None and record.w is not None:
            export_control_field(mesh, record.w, config.u_b, output / f"control_n{n}.vtk")
        if on_level is not None:
            on_level(record)

    write_table_csv(report, output / 'table.csv', record_timings=config.record_timings)
    report_path = output / 'report.json'
    try:
        report.save_json(report_path)
    except OSError as e:
        raise ExportError(report_path, e.strerror or str(e)) from e
    return report

