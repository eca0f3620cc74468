"""Batch evaluation of a policy on a dataset, and cross-method comparison.

Every trajectory contributes one closed-loop rollout from its optimal
initial state for its optimal duration; the report stores the terminal
position and velocity (and, for the landing, mass) errors in physical
units.  Comparisons express each method's mean errors as a relative
reduction against the first (baseline) report.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset
from .errors import (ConfigError, FormatError, PropagationError,
                     ZeroNormPredictionError)
from .neural_dynamics import rollout
from .policy import PolicyNetwork
from .problems import ProblemDefinition, get_problem

logger = logging.getLogger(__name__)

@dataclass
class EvalRow:
    index: int
    position_error: float             # physical units per problem
    velocity_error: float
    mass_error: float = 0.0           # kg; landing only
    failed: bool = False


@dataclass
class EvalReport:
    problem: str
    label: str
    position_unit: str
    velocity_unit: str
    rows: list[EvalRow] = field(default_factory=list)
    n_failed: int = 0
    summary: dict = field(default_factory=dict)
    n_trajectories: int = 0   # kept explicit so summaries reload without rows

    @property
    def n_evaluated(self) -> int:
        return self.n_trajectories - self.n_failed


def error_scales(problem: ProblemDefinition) -> tuple[float, float]:
    """(position, velocity) factors from internal units to reported units."""
    return (problem.position_error_physical(1.0),
            problem.velocity_error_physical(1.0))


def _summarize(rows: list[EvalRow]) -> dict:
    ok = [r for r in rows if not r.failed]
    if not ok:
        return {"count": 0}
    out = {"count": len(ok)}
    for name in ("position_error", "velocity_error", "mass_error"):
        values = np.array([getattr(r, name) for r in ok], dtype=float)
        out[name] = {"mean": float(np.mean(values)),
                     "median": float(np.median(values)),
                     "max": float(np.max(values))}
    return out


def evaluate(net: PolicyNetwork, dataset: Dataset, label: str = "",
             rel_tol: float = 1e-9) -> EvalReport:
    """Roll the policy out from every (x0*, t*) and report terminal errors."""
    if len(dataset) == 0:
        raise ConfigError("empty dataset")
    problem = get_problem(dataset.problem)
    pos_scale, vel_scale = error_scales(problem)
    pos_unit, vel_unit = problem.report_units

    rows: list[EvalRow] = []
    n_failed = 0
    for i, traj in enumerate(dataset.trajectories):
        try:
            arc = rollout(problem, net, traj.states[0], traj.t_star,
                          rel_tol=rel_tol, sample_count=2)
        except (PropagationError, ZeroNormPredictionError) as exc:
            logger.warning("trajectory %d rollout failed (%s)", i, exc)
            rows.append(EvalRow(index=i, position_error=np.nan,
                                velocity_error=np.nan, mass_error=np.nan,
                                failed=True))
            n_failed += 1
            continue
        xf = arc.final_state
        dr = float(np.linalg.norm(xf[0:3] - problem.target[0:3])) * pos_scale
        dv = float(np.linalg.norm(xf[3:6] - problem.target[3:6])) * vel_scale
        dm = (abs(float(xf[6]) - float(traj.states[-1, 6]))
              if problem.kind == "landing" else 0.0)
        rows.append(EvalRow(index=i, position_error=dr, velocity_error=dv,
                            mass_error=dm))
    report = EvalReport(problem=dataset.problem, label=label,
                        position_unit=pos_unit, velocity_unit=vel_unit,
                        rows=rows, n_failed=n_failed,
                        n_trajectories=len(rows))
    report.summary = _summarize(rows)
    return report


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_report(report: EvalReport, csv_path, json_path) -> None:
    """Per-trajectory delimited rows plus a structured summary document.

    Floats are written with round-trip precision so statistics recomputed
    from the delimited rows reproduce the summary bit-for-bit.
    """
    with open(csv_path, "w") as fh:
        fh.write("index,position_error,velocity_error,mass_error,failed\n")
        for r in report.rows:
            fh.write(f"{r.index},{r.position_error!r},{r.velocity_error!r},"
                     f"{r.mass_error!r},{int(r.failed)}\n")
    doc = {
        "problem": report.problem,
        "label": report.label,
        "position_unit": report.position_unit,
        "velocity_unit": report.velocity_unit,
        "trajectories": report.n_trajectories,
        "failed": report.n_failed,
        "summary": report.summary,
    }
    with open(json_path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_summary(json_path) -> EvalReport:
    """Rebuild a report (without per-trajectory rows) from its document."""
    with open(json_path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{json_path}: corrupt report document") from exc
    try:
        return EvalReport(problem=doc["problem"], label=doc["label"],
                          position_unit=doc["position_unit"],
                          velocity_unit=doc["velocity_unit"],
                          rows=[], n_failed=doc["failed"],
                          summary=doc["summary"],
                          n_trajectories=doc["trajectories"])
    except KeyError as exc:
        raise FormatError(f"{json_path}: missing report field {exc}") from exc


def load_report_rows(csv_path) -> list[EvalRow]:
    rows = []
    with open(csv_path) as fh:
        next(fh)
        for line in fh:
            f = line.strip().split(",")
            rows.append(EvalRow(index=int(f[0]), position_error=float(f[1]),
                                velocity_error=float(f[2]),
                                mass_error=float(f[3]),
                                failed=bool(int(f[4]))))
    return rows


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------

@dataclass
class ComparisonRow:
    label: str
    mean_position_error: float
    mean_velocity_error: float
    position_reduction_pct: float     # vs the first (baseline) report
    velocity_reduction_pct: float


def compare(reports: list[EvalReport]) -> list[ComparisonRow]:
    """Relative mean-error reductions of each report against the first."""
    if len(reports) < 1:
        raise ConfigError("nothing to compare")
    first = reports[0]
    for rep in reports[1:]:
        if rep.problem != first.problem \
                or rep.n_trajectories != first.n_trajectories:
            raise ConfigError("reports cover different datasets")
    for rep in reports:
        if rep.summary.get("count", 0) == 0:
            raise ConfigError(f"report {rep.label!r} has no evaluated rows")

    base_pos = first.summary["position_error"]["mean"]
    base_vel = first.summary["velocity_error"]["mean"]
    if base_pos <= 0.0 or base_vel <= 0.0:
        raise ConfigError("baseline mean errors must be positive")
    out = []
    for rep in reports:
        pos = rep.summary["position_error"]["mean"]
        vel = rep.summary["velocity_error"]["mean"]
        out.append(ComparisonRow(
            label=rep.label,
            mean_position_error=pos,
            mean_velocity_error=vel,
            position_reduction_pct=100.0 * (1.0 - pos / base_pos),
            velocity_reduction_pct=100.0 * (1.0 - vel / base_vel)))
    return out


def save_comparison(rows: list[ComparisonRow], csv_path) -> None:
    with open(csv_path, "w") as fh:
        fh.write("label,mean_position_error,mean_velocity_error,"
                 "position_reduction_pct,velocity_reduction_pct\n")
        for r in rows:
            fh.write(f"{r.label},{r.mean_position_error!r},"
                     f"{r.mean_velocity_error!r},"
                     f"{r.position_reduction_pct!r},"
                     f"{r.velocity_reduction_pct!r}\n")
