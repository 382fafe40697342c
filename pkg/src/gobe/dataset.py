"""Experiment data model, CSV ingestion, and synthetic data generation.

The unit-level table is immutable after construction: arrays are marked
read-only so a dataset can be shared freely across threads. Loading rejects
malformed rows with an error naming the row rather than imputing or dropping.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ParseError, SchemaError, ValidationError
from .rng import make_rng

_MAX_GENERATED_DAYS = 10_000_000


@dataclass(frozen=True)
class CsvSchema:
    """Column-role mapping for CSV ingestion.

    ``pre_period`` must name one of the ``covariates`` columns; ``day`` and
    ``unit_id`` are optional.
    """

    assignment: str
    outcome: str
    covariates: tuple[str, ...]
    pre_period: str
    day: str | None = None
    unit_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if not self.covariates:
            raise SchemaError("schema needs at least one covariate column")
        if self.pre_period not in self.covariates:
            raise SchemaError(
                f"pre-period column {self.pre_period!r} is not among the covariates"
            )
        names = [self.assignment, self.outcome, *self.covariates]
        if len(set(names)) != len(names):
            raise SchemaError("schema maps the same column to more than one role")

    @property
    def pre_period_col(self) -> int:
        return self.covariates.index(self.pre_period)


@dataclass(frozen=True)
class ExperimentData:
    """Unit-level records of one experiment.

    ``covariates`` is an N x K float matrix; ``pre_period_col`` marks the
    column holding each unit's pre-experimental value of the outcome metric,
    used for imbalance computations. ``day_index`` (1-based trigger day) is
    present only when duration analysis is requested.
    """

    unit_ids: np.ndarray
    assignment: np.ndarray
    outcome: np.ndarray
    covariates: np.ndarray
    pre_period_col: int
    day_index: np.ndarray | None = None

    def __post_init__(self):
        unit_ids = np.asarray(self.unit_ids)
        assignment = np.ascontiguousarray(self.assignment, dtype=np.int8)
        outcome = np.ascontiguousarray(self.outcome, dtype=np.float64)
        covariates = np.ascontiguousarray(self.covariates, dtype=np.float64)
        if covariates.ndim != 2:
            raise ValidationError("covariates must be a 2-D matrix")
        n = outcome.shape[0]
        if n < 1:
            raise ValidationError("dataset is empty")
        if not (assignment.shape == (n,) and covariates.shape[0] == n and unit_ids.shape == (n,)):
            raise ValidationError("column lengths disagree")
        if not ((assignment == 0) | (assignment == 1)).all():
            raise ValidationError("assignment values must be 0 or 1")
        if not np.isfinite(outcome).all():
            raise ValidationError("outcome contains non-finite values")
        if not np.isfinite(covariates).all():
            raise ValidationError("covariates contain non-finite values")
        if not 0 <= self.pre_period_col < covariates.shape[1]:
            raise ValidationError(
                f"pre_period_col {self.pre_period_col} out of range for K={covariates.shape[1]}"
            )
        day_index = self.day_index
        if day_index is not None:
            day_index = np.ascontiguousarray(day_index, dtype=np.int64)
            if day_index.shape != (n,):
                raise ValidationError("day_index length disagrees with outcome")
            if (day_index < 1).any():
                raise ValidationError("day_index values must be positive")
            day_index.setflags(write=False)
        for arr in (unit_ids, assignment, outcome, covariates):
            arr.setflags(write=False)
        object.__setattr__(self, "unit_ids", unit_ids)
        object.__setattr__(self, "assignment", assignment)
        object.__setattr__(self, "outcome", outcome)
        object.__setattr__(self, "covariates", covariates)
        object.__setattr__(self, "day_index", day_index)

    @property
    def n_units(self) -> int:
        return self.outcome.shape[0]

    @property
    def k_covariates(self) -> int:
        return self.covariates.shape[1]

    @property
    def pre_period(self) -> np.ndarray:
        """The designated pre-experimental column of the covariate matrix."""
        return self.covariates[:, self.pre_period_col]

    def arm_mask(self, t: int) -> np.ndarray:
        return self.assignment == t

    def arm_sizes(self) -> tuple[int, int]:
        n1 = int(np.count_nonzero(self.assignment))
        return self.n_units - n1, n1

    def require_both_arms(self) -> None:
        """Raise unless the experiment has >= 2 units and both arms present."""
        if self.n_units < 2:
            raise ValidationError("experiment needs at least 2 units")
        n0, n1 = self.arm_sizes()
        if n0 == 0 or n1 == 0:
            raise ValidationError(
                f"both arms must be non-empty (sizes: control={n0}, treatment={n1})"
            )


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the synthetic experiment generator.

    The outcome is built as ``rho * x + sqrt(1 - rho^2) * noise_sd * eps +
    true_ate * J`` with ``x`` (the pre-period column) and ``eps`` standard
    normal, so at ``noise_sd = 1`` corr(x, Y) targets ``rho``. Remaining
    covariates are independent standard normals.
    """

    n_units: int
    assignment_prob: float = 0.5
    k_covariates: int = 1
    outcome_cor: float = 0.0
    true_ate: float = 0.0
    noise_sd: float = 1.0
    daily_arrivals: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_units < 2:
            raise ValidationError("n_units must be >= 2")
        if not 0.0 < self.assignment_prob < 1.0:
            raise ValidationError("assignment_prob must be in (0, 1)")
        if self.k_covariates < 1:
            raise ValidationError("k_covariates must be >= 1")
        if abs(self.outcome_cor) > 1.0:
            raise ValidationError("outcome_cor must be in [-1, 1]")
        if self.noise_sd <= 0.0:
            raise ValidationError("noise_sd must be > 0")
        if self.daily_arrivals < 0.0:
            raise ValidationError("daily_arrivals must be >= 0")


def generate(config: SyntheticConfig) -> ExperimentData:
    """Generate a synthetic experiment, deterministic in the config seed."""
    rng = make_rng(config.seed)
    n, k = config.n_units, config.k_covariates
    rho = config.outcome_cor
    assignment = (rng.random(n) < config.assignment_prob).astype(np.int8)
    x = rng.standard_normal(n)
    eps = rng.standard_normal(n)
    outcome = (rho * x
               + math.sqrt(1.0 - rho * rho) * config.noise_sd * eps
               + config.true_ate * assignment)
    covariates = np.empty((n, k))
    covariates[:, 0] = x
    if k > 1:
        covariates[:, 1:] = rng.standard_normal((n, k - 1))
    day_index = _poisson_arrival_days(rng, n, config.daily_arrivals) if config.daily_arrivals > 0 else None
    data = ExperimentData(
        unit_ids=np.arange(n, dtype=np.int64),
        assignment=assignment,
        outcome=outcome,
        covariates=covariates,
        pre_period_col=0,
        day_index=day_index,
    )
    data.require_both_arms()
    return data


def _poisson_arrival_days(rng: np.random.Generator, n: int, rate: float) -> np.ndarray:
    """Assign units to days via cumulative Poisson arrival counts."""
    days = np.empty(n, dtype=np.int64)
    filled = 0
    for day in range(1, _MAX_GENERATED_DAYS + 1):
        count = min(int(rng.poisson(rate)), n - filled)
        days[filled:filled + count] = day
        filled += count
        if filled == n:
            return days
    raise ValidationError("daily_arrivals too small to populate the experiment")


def restrict_to_arm(data: ExperimentData, t: int) -> ExperimentData:
    """Keep only the units assigned to arm ``t`` (assignment retained as-is)."""
    if t not in (0, 1):
        raise ValidationError(f"unknown arm {t!r}; arms are 0 and 1")
    mask = data.arm_mask(t)
    if not mask.any():
        raise ValidationError(f"arm {t} is empty")
    return ExperimentData(
        unit_ids=data.unit_ids[mask],
        assignment=data.assignment[mask],
        outcome=data.outcome[mask],
        covariates=data.covariates[mask],
        pre_period_col=data.pre_period_col,
        day_index=None if data.day_index is None else data.day_index[mask],
    )


def filter_by_day(data: ExperimentData, day: int) -> ExperimentData:
    """Keep only units that triggered on or before ``day``."""
    if data.day_index is None:
        raise ValidationError("day filtering requires a day column")
    if day < 1:
        raise ValidationError("day filter must be >= 1")
    mask = data.day_index <= day
    if not mask.any():
        raise ValidationError(f"no units triggered by day {day}")
    out = ExperimentData(
        unit_ids=data.unit_ids[mask],
        assignment=data.assignment[mask],
        outcome=data.outcome[mask],
        covariates=data.covariates[mask],
        pre_period_col=data.pre_period_col,
        day_index=data.day_index[mask],
    )
    out.require_both_arms()
    return out


def with_assignment(data: ExperimentData, assignment: np.ndarray) -> ExperimentData:
    """Same units with a replacement arm labelling (used by the A/A harness)."""
    return replace(data, assignment=assignment)


def default_schema(data: ExperimentData) -> CsvSchema:
    """Canonical column names used by write_csv, for round-tripping."""
    covs = tuple(f"z{i + 1}" for i in range(data.k_covariates))
    return CsvSchema(
        assignment="assignment",
        outcome="outcome",
        covariates=covs,
        pre_period=covs[data.pre_period_col],
        day="day" if data.day_index is not None else None,
        unit_id="unit_id",
    )


def load_csv(path, schema: CsvSchema) -> ExperimentData:
    """Load and validate an experiment table from a UTF-8 CSV file.

    Any unparseable or non-finite cell in a mapped column aborts the load
    with an error naming the offending data row (1-based, header excluded).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: file is empty")
        col = _resolve_columns(header, schema, path)
        assignment, outcome, days, ids = [], [], [], []
        cov_rows = []
        for i, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise ParseError(f"row {i}: expected {len(header)} fields, got {len(row)}")
            assignment.append(_parse_assignment(row[col[schema.assignment]], i, schema.assignment))
            outcome.append(_parse_number(row[col[schema.outcome]], i, schema.outcome))
            cov_rows.append([_parse_number(row[col[c]], i, c) for c in schema.covariates])
            if schema.day is not None:
                days.append(_parse_day(row[col[schema.day]], i, schema.day))
            if schema.unit_id is not None:
                ids.append(row[col[schema.unit_id]])
    n = len(outcome)
    if n < 2:
        raise ValidationError(f"{path}: experiment needs at least 2 data rows, got {n}")
    data = ExperimentData(
        unit_ids=np.array(ids) if ids else np.arange(n, dtype=np.int64),
        assignment=np.array(assignment, dtype=np.int8),
        outcome=np.array(outcome),
        covariates=np.array(cov_rows),
        pre_period_col=schema.pre_period_col,
        day_index=np.array(days, dtype=np.int64) if days else None,
    )
    data.require_both_arms()
    return data


def write_csv(data: ExperimentData, path, schema: CsvSchema | None = None) -> CsvSchema:
    """Write a dataset as CSV; floats use shortest round-trip formatting.

    Returns the schema describing the written columns, suitable for
    load_csv to reproduce the dataset exactly.
    """
    schema = schema or default_schema(data)
    header = [schema.assignment, schema.outcome, *schema.covariates]
    if schema.day is not None:
        header.append(schema.day)
    if schema.unit_id is not None:
        header.insert(0, schema.unit_id)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n_units):
            row = [int(data.assignment[i]), repr(float(data.outcome[i]))]
            row.extend(repr(float(v)) for v in data.covariates[i])
            if schema.day is not None:
                row.append(int(data.day_index[i]))
            if schema.unit_id is not None:
                row.insert(0, data.unit_ids[i])
            writer.writerow(row)
    return schema


def _resolve_columns(header: list[str], schema: CsvSchema, path) -> dict[str, int]:
    needed = [schema.assignment, schema.outcome, *schema.covariates]
    if schema.day is not None:
        needed.append(schema.day)
    if schema.unit_id is not None:
        needed.append(schema.unit_id)
    col = {}
    for name in needed:
        hits = [i for i, h in enumerate(header) if h == name]
        if not hits:
            raise SchemaError(f"{path}: column {name!r} not found in header")
        if len(hits) > 1:
            raise SchemaError(f"{path}: column {name!r} appears more than once")
        col[name] = hits[0]
    return col


def _parse_number(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(
            f"row {row}, column {column!r}: cannot parse {text!r} as a number"
        ) from None
    if not math.isfinite(value):
        raise ValidationError(f"row {row}, column {column!r}: non-finite value {text!r}")
    return value


def _parse_assignment(text: str, row: int, column: str) -> int:
    value = _parse_number(text, row, column)
    if value not in (0.0, 1.0):
        raise ValidationError(
            f"row {row}, column {column!r}: assignment must be 0 or 1, got {text!r}"
        )
    return int(value)


def _parse_day(text: str, row: int, column: str) -> int:
    value = _parse_number(text, row, column)
    if value != int(value) or value < 1:
        raise ValidationError(
            f"row {row}, column {column!r}: day must be a positive integer, got {text!r}"
        )
    return int(value)
