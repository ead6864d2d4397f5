"""CSV artifacts. Floats use the shortest round-trip repr so reruns are byte-identical."""
import csv
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np

from app.core.errors import NumericalError
from app.schemas.design import DesignResult
from app.schemas.validation import ValidationReport


def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def write_csv(
    path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]], meta: Dict[str, Any]
) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# " + " ".join(f"{k}={_cell(v)}" for k, v in meta.items()) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def write_bound_trajectory(path: Path, phi: np.ndarray, theta_bound: np.ndarray, meta) -> Path:
    q = theta_bound.shape[-1]
    header = ["t", "phi"] + [f"L_{i}_{j}" for i in range(q) for j in range(q)]
    rows = (
        [t + 1, phi[t], *theta_bound[t].reshape(-1)] for t in range(phi.shape[0])
    )
    return write_csv(path, header, rows, meta)


def write_bound_trace(path: Path, values: np.ndarray, meta, column: str = "mean_phi") -> Path:
    return write_csv(path, ["t", column], ([t + 1, v] for t, v in enumerate(values)), meta)


def _parameter_columns(results: Sequence[DesignResult]) -> List[str]:
    names: List[str] = []
    for result in results:
        names += [name for name in result.parameter_names if name not in names]
    return names


def write_case_report(path: Path, results: Sequence[DesignResult], meta) -> Path:
    columns = _parameter_columns(results)
    rows = []
    for result in results:
        values = dict(zip(result.parameter_names, result.phi_star))
        rows.append(
            [result.case.value]
            + [values.get(name) for name in columns]
            + [result.objective, result.converged]
        )
    return write_csv(path, ["case", *columns, "psi_bar", "converged"], rows, meta)


def write_design_history(path: Path, results: Sequence[DesignResult], meta) -> Path:
    width = max((len(r.parameter_names) for r in results), default=0)
    header = ["case", "iteration"] + [f"phi_{i}" for i in range(width)] + ["objective"]
    rows = []
    for result in results:
        for item in result.history:
            padded = item.phi + [None] * (width - len(item.phi))
            rows.append([result.case.value, item.iteration, *padded, item.objective])
    return write_csv(path, header, rows, meta)


def write_mse_trace(path: Path, report: ValidationReport, meta) -> Path:
    rows = (
        [t + 1, mse, bound]
        for t, (mse, bound) in enumerate(zip(report.trace_mse, report.trace_bound))
    )
    return write_csv(path, ["t", "trace_mse", "trace_bound"], rows, meta)


def write_validation_summary(path: Path, reports: Dict[str, ValidationReport], meta) -> Path:
    rows = [
        [case, report.sum_trace_mse, report.violations, report.runs]
        for case, report in reports.items()
    ]
    return write_csv(path, ["case", "sum_trace_mse", "violations", "runs"], rows, meta)


def write_input_sample(path: Path, u_seq: np.ndarray, meta) -> Path:
    header = ["t"] + [f"u_{j}" for j in range(u_seq.shape[1])]
    return write_csv(path, header, ([t + 1, *u] for t, u in enumerate(u_seq)), meta)


def write_diagnostic(path: Path, exc: NumericalError, meta) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"error={type(exc).__name__}", f"message={exc.message}"]
    lines += [f"{k}={_cell(v)}" for k, v in sorted(exc.context.items())]
    lines += [f"{k}={_cell(v)}" for k, v in meta.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
