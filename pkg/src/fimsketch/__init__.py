"""Sensitivity-preserving design down-sampling by importance-sampled FIM sketches."""
__version__ = "0.1.0"

from .fim import Fim
from .sketch import (DensityField, DiscreteRowSource, SampledSketch, concentration_trial, optimal_density,
                     sample_size_bound, sketch_product, sketch_rows)
from .design import Design, DesignReport, compare_designs, design_fim, full_fim

__all__ = [
    "Fim", "DensityField", "DiscreteRowSource", "SampledSketch", "concentration_trial", "optimal_density",
    "sample_size_bound", "sketch_product", "sketch_rows", "Design", "DesignReport", "compare_designs",
    "design_fim", "full_fim",
]
