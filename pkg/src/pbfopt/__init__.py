"""Greedy beam-parameter optimization for powder bed fusion melting.

Fast analytic temperatures for a moving Gaussian beam on a half space, plus
receding-window greedy optimization of per-segment spot size and speed
against reference maximum temperatures on the beam path and a subsurface
secondary path.
"""

__version__ = "0.1.0"

from .objective import GlobalObjective, ObjectiveSpec, Window, global_objective
from .optimize import (
    DecisionBounds,
    GreedyProblem,
    ParameterFunctionModel,
    SolverOptions,
    WindowSchedule,
    extend_solution,
    greedy_linewise,
    greedy_segmentwise,
    solve_box_qn,
)
from .scanpath import (
    ScanPath,
    ScanTiming,
    SecondaryPath,
    beam_position,
    build_secondary_path,
    compute_timing,
    hatch_line_maps,
)
from .scenario import Scenario, load_scenario
from .thermal import (
    BeamParameters,
    MaterialParams,
    MaxTempQuery,
    backend_name,
    calibrate_smoothing,
    field_on_grid,
    max_temperature,
    segment_contribution,
    temperature,
)
