"""Numerical laboratory for contraction inequalities on stationary cones."""

__version__ = "0.1.0"

from .geometry import (ConeSpec, CrossSection, UnsupportedConeError,
                       build_cross_section, build_product_section,
                       load_cross_section, quadrature, save_cross_section,
                       verify_stationarity)
from .functional import (NormalField, RadialField, area_cone, area_gradient,
                         area_sigma, first_variation, quadratic_form,
                         second_variation_assemble, second_variation_at,
                         slicing_check)
from .spectral import SpectralBasis, eigendecompose, project
from .reduction import (LojFit, ReducedFunction, ReducedMap,
                        SyntheticReducedFunction, integrability_test,
                        lojasiewicz_fit, quartic_fixture, reduced_gradient,
                        saddle_fixture)
from .competitor import (Competitor, EpiParams, EpiReport, FlowTrajectory,
                         build_competitor, error_ledger, gradient_flow,
                         kernel_flux_term, run_epi_ensemble, verify_epi)
from .decay import (DecayParams, DecayTrajectory, dyadic_flat_sum,
                    fit_power_rate, integrate_excess, monitored_quantity)
from .traces import TraceEnsembleSpec, sample
from .errors import (ConelabError, GraphDegenerateError,
                     NewtonConvergenceError, UnresolvedTailError)
