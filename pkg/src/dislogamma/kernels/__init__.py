"""Interaction potentials, elasticity fields and kernel decompositions."""

from .elasticity import (BurgersAngle, LameParameters, displacement_field, displacement_jump, edge_potential,
                         edge_potential_polar, edge_v_reg, edge_w_components, elasticity_apply,
                         elasticity_sqrt_apply, lens_integral, rotation, strain_kernel, stress_kernel,
                         stress_kernel_reference, unit)
from .families import (KERNELSPEC_VERSION, EdgeFamily, KernelFamily, LogFamily, RadialFamily, RieszFamily,
                       family_from_descriptor, riesz_decomposition)
from .radial import (RadialTable, calibrate_riesz_constant, cutoff_psi, log_potential,
                     riesz_composition_constant, riesz_potential)

__all__ = [
    "BurgersAngle", "EdgeFamily", "KERNELSPEC_VERSION", "KernelFamily", "LameParameters", "LogFamily",
    "RadialFamily", "RadialTable", "RieszFamily", "calibrate_riesz_constant", "cutoff_psi",
    "displacement_field", "displacement_jump", "edge_potential", "edge_potential_polar", "edge_v_reg",
    "edge_w_components", "elasticity_apply", "elasticity_sqrt_apply", "family_from_descriptor",
    "lens_integral", "log_potential", "riesz_composition_constant", "riesz_decomposition",
    "riesz_potential", "rotation", "strain_kernel", "stress_kernel", "stress_kernel_reference", "unit",
]
