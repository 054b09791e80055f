"""conelab: spectral laboratory for magnetic Dirichlet Laplacians on conical layers.

The package discretizes the angular-momentum fibers of the
Aharonov-Bohm magnetic Dirichlet Laplacian on a conical layer of width
pi, computes their discrete spectra below the essential-spectrum
threshold 1, and provides numerical checks of the spectral transition at
the critical flux cos(theta)/2, of eigenvalue-counting asymptotics, and
of Hardy-type lower bounds at critical flux.
"""

from .errors import (ConelabError, FactorizationError,
                     InsufficientPointsError, MismatchError,
                     NoConvergenceError, NonPositiveEstimateError,
                     ParameterError)
from .geometry import (Aperture, CornerPoint, MeridianPoint, ShearedMesh,
                       build_mesh, geometric_mesh, rotate_to_corner,
                       rotate_to_meridian, shear_to_rectangle, unshear)
from .forms import (FluxProfile, HardyWeightMatrix, LayerParams,
                    OperatorPencil, assemble_fiber, assemble_hardy_weight,
                    assemble_scaled_fiber, critical_flux, export_matrix,
                    gamma_coefficient, potential_coefficient, reduce_flux)
from .eigensolve import (SpectrumResult, TransitionScan, count_below,
                         counting_function, dense_oracle, discrete_spectrum,
                         layer_counting_curve, monotonicity_scan,
                         solve_lowest, transition_scan, THRESHOLD)
from .oned import (CountingFit, OneDProblem, TridiagPencil, assemble_1d,
                   bracketing_counts, count_below_1d, default_energy_grid,
                   ks_slope, layer_slope, negative_counting_curve,
                   negative_eigenvalues, transverse_modes)
from .hardy import (HardyReport, check_local_hardy, check_refined_bound,
                    estimate_hardy_constant, local_hardy_f, make_trial_set)

__version__ = "0.1.0"
