"""Validation, diagnostics and convergence reports"""
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field


class AssumptionCheck(BaseModel):
    """Outcome of one standing assumption"""
    name: str = Field(..., description="Assumption identifier, e.g. electroneutrality_I")
    passed: bool = Field(..., description="Whether the assumption holds everywhere")
    worst_value: float = Field(..., description="Most violating (or closest to violating) value")
    threshold: float = Field(..., description="Bound the value is compared against")
    location: Optional[Tuple[float, float]] = Field(None, description="Point of the worst value, if spatial")
    message: str = Field("", description="Human-readable summary")


class ValidationReport(BaseModel):
    """Pass/fail per assumption; a run needs every check to pass"""
    model_config = ConfigDict(frozen=True)

    checks: List[AssumptionCheck] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> List[AssumptionCheck]:
        return [c for c in self.checks if not c.passed]

    def to_frame(self) -> pd.DataFrame:
        rows = [c.model_dump() for c in self.checks]
        return pd.DataFrame(rows, columns=list(AssumptionCheck.model_fields))


class DiagnosticsRecord:
    """
    Per-step time series of a run

    Every appended row carries the same columns, so the series stay aligned
    on one time grid. Wall-clock time is kept apart from the table so that
    written CSVs do not depend on machine speed.
    """

    def __init__(self, columns: List[str]):
        self.columns = list(columns)
        self.rows: List[Dict[str, float]] = []
        self.wall_clock: List[float] = []

    def append(self, row: Dict[str, float], seconds: float = 0.0):
        missing = set(self.columns) - set(row)
        if missing:
            raise KeyError(f"diagnostics row is missing columns {sorted(missing)}")
        self.rows.append({c: float(row[c]) for c in self.columns})
        self.wall_clock.append(float(seconds))

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=self.columns)


class ConvergenceReport:
    """
    Errors between averaged micro fields and macro fields per epsilon

    errors is a long table with columns epsilon_inv, epsilon, fraction, t,
    field, error; failures maps an epsilon_inv to the reason its leg failed.
    """

    ERROR_COLUMNS = ["epsilon_inv", "epsilon", "fraction", "t", "field", "error"]

    def __init__(self, epsilon_invs: List[int], fractions: List[float], fields: List[str]):
        inv = list(epsilon_invs)
        if any(b <= a for a, b in zip(inv, inv[1:])):
            raise ValueError("epsilon list must be strictly decreasing")
        self.epsilon_invs = inv
        self.fractions = list(fractions)
        self.fields = list(fields)
        self.errors = pd.DataFrame(columns=self.ERROR_COLUMNS)
        self.failures: Dict[int, str] = {}
        self.diagnostics: Dict[int, pd.DataFrame] = {}

    def add_errors(self, rows: List[Dict[str, float]]):
        if any(r["error"] < 0 for r in rows):
            raise ValueError("errors must be nonnegative")
        frame = pd.DataFrame(rows, columns=self.ERROR_COLUMNS)
        self.errors = frame if self.errors.empty else pd.concat([self.errors, frame], ignore_index=True)
        self.errors = self.errors.sort_values(["field", "fraction", "epsilon_inv"], kind="mergesort").reset_index(drop=True)

    def mark_failed(self, epsilon_inv: int, reason: str):
        self.failures[epsilon_inv] = reason

    @property
    def succeeded(self) -> List[int]:
        return [e for e in self.epsilon_invs if e not in self.failures]

    def table(self, field_name: str) -> pd.DataFrame:
        """Rows per epsilon, one error column per snapshot fraction"""
        sub = self.errors[self.errors["field"] == field_name]
        if sub.empty:
            return pd.DataFrame(index=pd.Index([], name="epsilon_inv"))
        return sub.pivot(index="epsilon_inv", columns="fraction", values="error").sort_index()

    def ratios(self, field_name: str) -> pd.DataFrame:
        """error(k+1)/error(k) between consecutive successful epsilons"""
        table = self.table(field_name)
        if len(table) < 2:
            return pd.DataFrame(columns=table.columns)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = table.iloc[1:].to_numpy() / table.iloc[:-1].to_numpy()
        return pd.DataFrame(ratios, index=table.index[1:], columns=table.columns)

    def is_monotone(self, field_name: str, floor: float = 0.0) -> bool:
        """Errors decrease along the epsilon list at every snapshot, or stay below floor"""
        table = self.table(field_name)
        values = table.to_numpy()
        for a, b in zip(values[:-1], values[1:]):
            if np.any((b >= a) & (b > floor)):
                return False
        return True
