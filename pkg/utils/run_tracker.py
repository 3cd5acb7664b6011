import json
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from tabulate import tabulate


class RunCounters:
    """Track factorizations, solves and inner CG iterations of one solver run."""

    def __init__(self):
        self._lock = threading.Lock()
        self.factorizations = 0
        self.solves = 0
        self.cg_iterations = 0

    def add_factorization(self, count: int = 1):
        with self._lock:
            self.factorizations += count

    def add_solve(self, count: int = 1):
        with self._lock:
            self.solves += count

    def add_cg_iterations(self, count: int):
        with self._lock:
            self.cg_iterations += count

    def snapshot(self) -> Dict[str, int]:
        with self._lock:
            return {
                'factorizations': self.factorizations,
                'solves': self.solves,
                'cg_iterations': self.cg_iterations,
            }


@dataclass
class LevelRecord:
    """Outcome of one solver run on one mesh level (a row of the result table)."""

    case: str
    n: int
    nodes: int
    iterations: int = 0
    factorizations: int = 0
    solves: int = 0
    wall_time: float = 0.0
    converged: bool = False
    diverged: bool = False
    degenerate_elements: int = 0
    boundary_cut_elements: int = 0
    objective: float = float('nan')
    u_bound: float = 0.0
    trace: List[Dict[str, Any]] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    # final iterate: w for the control u = u_b sign(w); xi for the dual variable
    w: Optional[np.ndarray] = field(default=None, repr=False)
    xi: Optional[np.ndarray] = field(default=None, repr=False)

    def finish(self, counters: RunCounters, wall_time: float):
        """Copy the final counter values into the record."""
        totals = counters.snapshot()
        self.factorizations = totals['factorizations']
        self.solves = totals['solves']
        self.wall_time = wall_time

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data.pop('w')
        data.pop('xi')
        return data


@dataclass
class RunReport:
    """All level records of one experiment."""

    config: Dict[str, Any] = field(default_factory=dict)
    levels: List[LevelRecord] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return all(level.converged for level in self.levels)

    def add(self, record: LevelRecord):
        self.levels.append(record)

    def summary(self) -> str:
        """Get a formatted summary of all levels."""
        if not self.levels:
            return "No levels run."

        table = [
            [level.nodes, level.iterations, level.factorizations, level.solves,
             f"{level.wall_time:.4f}", 'yes' if level.converged else 'no',
             f"{level.objective:.6e}"]
            for level in self.levels
        ]
        return tabulate(
            table,
            headers=['# nodes', 'iters', 'fact.', 'solves', 'time (s)', 'converged', 'objective'],
            tablefmt='grid'
        )

    def save_json(self, path):
        """Save the report without field arrays."""
        payload = {'config': self.config, 'levels': [level.to_dict() for level in self.levels]}
        with open(Path(path), 'w') as f:
            json.dump(payload, f, indent=2, default=float)

    @classmethod
    def load_json(cls, path) -> 'RunReport':
        with open(Path(path), 'r') as f:
            payload = json.load(f)
        return cls(
            config=payload.get('config', {}),
            levels=[LevelRecord(**level) for level in payload.get('levels', [])],
        )
