"""Switching constraints: fixings, oracles, cuts and rounding."""

from .constraints import (
    FixingSet,
    Infeasible,
    MaxSwitchings,
    MinDwell,
    Propagation,
    SwitchingConstraint,
    delete,
    embed,
    extended_positions,
    propagate,
    switches_enforced,
)
from .oracles import (
    DwellPlan,
    DwellResult,
    SwitchingControl,
    dwell_feasible,
    optimize_dwell,
    optimize_maxswitch,
    shift_set,
)
from .rounding import round_cia
from .separation import (
    CuttingPlane,
    SeparationContext,
    SeparationOutcome,
    project_hull,
    separate,
    separate_with_info,
    total_variation,
    tv_subgradient_cut,
)

__all__ = [
    "CuttingPlane",
    "DwellPlan",
    "DwellResult",
    "FixingSet",
    "Infeasible",
    "MaxSwitchings",
    "MinDwell",
    "Propagation",
    "SeparationContext",
    "SeparationOutcome",
    "SwitchingConstraint",
    "SwitchingControl",
    "delete",
    "dwell_feasible",
    "embed",
    "extended_positions",
    "optimize_dwell",
    "optimize_maxswitch",
    "project_hull",
    "propagate",
    "round_cia",
    "separate",
    "separate_with_info",
    "shift_set",
    "switches_enforced",
    "total_variation",
    "tv_subgradient_cut",
]
