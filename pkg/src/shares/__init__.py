"""Shape arithmetic expressions.

Expression trees that mix arithmetic with trainable univariate shape
functions, a validator for the transparent subclass, a genetic-programming
search over such trees and tools to read quantities off fitted shapes.
"""
from .analysis import detect_segments, extract_water_properties, plot_svg, sample_shape
from .closedform import check_transparent_expressible, parse, parse_share
from .datasets import Dataset, make_dataset, water_temperature
from .evaluator import TrainConfig, compile_tree, load_model, save_model, train
from .expr import (
    ExprTree,
    canonical_render,
    render,
    structural_metrics,
    transparency_bounds,
    validate_transparent,
)
from .kernels import BACKEND
from .search import SearchConfig, evolve, score_program

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Dataset",
    "ExprTree",
    "SearchConfig",
    "TrainConfig",
    "canonical_render",
    "check_transparent_expressible",
    "compile_tree",
    "detect_segments",
    "evolve",
    "extract_water_properties",
    "load_model",
    "make_dataset",
    "parse",
    "parse_share",
    "plot_svg",
    "render",
    "sample_shape",
    "save_model",
    "score_program",
    "structural_metrics",
    "train",
    "transparency_bounds",
    "validate_transparent",
    "water_temperature",
]
