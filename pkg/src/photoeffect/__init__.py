"""Leading-order photoionization of one-electron atoms by photon wave packets."""

from .errors import (BasisCoverageError, ConfigError, InvalidInputError, MissingChannelError,
                     NoBoundStateError, NumericalError, OrthonormalityError, PhotoeffectError,
                     ResolutionError)
from .ionization import (IonizationResult, ProbabilityEstimate, p3_multi, p3_single,
                         shell_amplitude, total_probability)
from .photon_model import (Cutoff, MultiPulse, RadialWindow, TransversePulse, correlation_A,
                           correlation_E, formfactor_inner, make_pulse, omega_norm, pulse_inner)
from .radial_spectral import (BoundState, ContinuumWave, Coulomb, RadialGrid, ShortRange,
                              Wavepacket, completeness_defect, continuum_wave, default_grid,
                              dipole_element, eigen_overlap, evolve, excited_bound_states,
                              free_particle, gaussian_well, ground_state, momentum_element,
                              tabulated_potential)

__version__ = "0.1.0"
