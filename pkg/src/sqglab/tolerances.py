"""Single table of thresholds used to turn recorded values into pass/fail.

Every check record carries ``quantity`` and ``value``; :func:`judge`
looks up ``(check, quantity)`` here.  Kinds:

``max``     value <= threshold
``min``     value >= threshold
``finite``  value is a finite number
``report``  recorded only, never fails
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerance:
    kind: str
    threshold: float | None = None
    note: str = ""

    def accepts(self, value) -> bool:
        if self.kind == "report":
            return True
        if value is None:
            return False
        v = float(value)
        if self.kind == "finite":
            return math.isfinite(v)
        if math.isnan(v):
            return False
        if self.kind == "max":
            return v <= self.threshold
        if self.kind == "min":
            return v >= self.threshold
        raise ValueError(f"unknown tolerance kind {self.kind!r}")

    def as_dict(self) -> dict:
        return {"kind": self.kind, "threshold": self.threshold}


TOLERANCES: dict[tuple[str, str], Tolerance] = {
    ("energy_balance", "residual_per_unit_time"): Tolerance("max", 1e-6, "relative to ||theta0||_2^2"),
    ("l2_monotone", "max_increase"): Tolerance("max", 1e-4, "relative to ||theta0||_2"),
    ("max_principle", "max_increase"): Tolerance("max", 1e-4, "relative to ||theta0||_inf"),
    ("mean_conservation", "drift"): Tolerance("max", 1e-10),
    ("linf_decay", "empirical_C"): Tolerance("finite"),
    ("level_set_energy", "slack"): Tolerance("min", -1e-5, "relative to ||theta0||_2^2"),
    ("level_energy_sequence", "max_increase"): Tolerance("max", 0.0, "U_k non-increasing"),
    ("level_energy_sequence", "M_star_margin"): Tolerance("min", 0.0, "M* - sup|theta(t0)|"),
    ("cordoba", "min_slack"): Tolerance("min", -1e-8, "relative to the scale of both sides"),
    ("interpolation", "ratio"): Tolerance("finite"),
    ("normal_derivative", "relative_error"): Tolerance("max", 1e-3),
    ("extension_agreement", "max_difference"): Tolerance("max", 1e-6),
    ("dirichlet_energy", "relative_error"): Tolerance("max", 1e-5),
    ("local_energy", "identity_residual"): Tolerance("max", 1e-3, "relative to the mass at t1"),
    ("local_energy", "fitted_factor"): Tolerance("finite"),
    ("isoperimetric", "max_constant"): Tolerance("finite"),
    ("isoperimetric", "r_variation"): Tolerance("report", None, "literal r-power; grows with r"),
    ("isoperimetric", "scale_free_variation"): Tolerance("max", 0.2),
    ("change_of_variables", "mismatch"): Tolerance("max", 1e-4),
    ("barrier_f1", "lambda_margin"): Tolerance("min", 0.0),
    ("barrier_f2", "beta0_relative_error"): Tolerance("max", 0.02),
    ("scaling", "residual_ratio"): Tolerance("max", 10.0),
    ("holder", "delta"): Tolerance("min", 0.0),
    ("holder", "fit_r2"): Tolerance("min", 0.9),
    ("zoom", "contracting_levels"): Tolerance("min", 3),
    ("velocity_holder", "seminorm"): Tolerance("finite"),
}


def lookup(check: str, quantity: str) -> Tolerance:
    try:
        return TOLERANCES[(check, quantity)]
    except KeyError:
        raise KeyError(f"no tolerance for {check}/{quantity}") from None


def judge(record: dict) -> bool:
    """Pass/fail of one record, recomputed from the table."""
    if record.get("status") == "error":
        return False
    if record.get("status") == "skipped":
        return True
    return lookup(record["check"], record["quantity"]).accepts(record.get("value"))
