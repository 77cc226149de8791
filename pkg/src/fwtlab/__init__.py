"""fwtlab: a numerical laboratory for free-will tests of classical-quantum coexistence.

A *free-will test* (FWT) asks whether a classical variable ``z`` assigned to a
quantum state can be used to control the system's later dynamics without
breaking the statistical consistency of the theory.  Operationally the test
wraps an assignment-plus-control scheme into a map on ensembles and checks
that the map is linear (and, where it can be computed exactly, completely
positive and trace preserving).  Variables that pass are called *tangible*.

Subpackages implement the individual coexistence schemes:

- :mod:`fwtlab.qcore` -- finite-dimensional states, unitaries, Choi matrices.
- :mod:`fwtlab.assignments` -- projective, Husimi and mean-field assignments.
- :mod:`fwtlab.bohm` -- 1-D pilot-wave trajectories and delayed control.
- :mod:`fwtlab.histories` -- class operators and the decoherence functional.
- :mod:`fwtlab.cmeas` -- time-continuous measurement with record feedback.
- :mod:`fwtlab.hybrid` -- hybrid classical-quantum densities.
- :mod:`fwtlab.harness` -- the test harness itself: maps, probes, verdicts.
- :mod:`fwtlab.experiments` -- the canned experiment registry.
- :mod:`fwtlab.cli` -- command line front end (``fwtlab list|run|report``).
"""

from fwtlab.qcore import (
    DensityMatrix,
    Observable,
    ProjectorSet,
    UnitaryOperator,
    ValidationError,
    apply_unitary,
    choi_of_map,
    cp_tp_check,
    evolve_unitary,
    random_density_matrix,
)

__all__ = [
    "DensityMatrix",
    "Observable",
    "ProjectorSet",
    "UnitaryOperator",
    "ValidationError",
    "apply_unitary",
    "choi_of_map",
    "cp_tp_check",
    "evolve_unitary",
    "random_density_matrix",
]

__version__ = "0.1.0"
