"""Latent variable evolution toolkit: search a fingerprint generator's
latent space for images that match many enrolled identities, with an
in-repo minutiae extractor, matcher, and FMR calibration."""

__version__ = "0.1.0"

from .image import GrayImage, load_image, save_image
from .generator import (GeneratorModel, generate, generate_raw, load_generator,
                        load_generator_file, save_generator)
from .minutiae import Minutia, MinutiaeTemplate, extract
from .matcher import MatcherParams, MATCHERS, build_edge_table, is_match, match_score
from .gallery import (Gallery, MatchThreshold, TemplateGallery, empirical_fmr,
                      enroll, impostor_scores, ingest, threshold_for_fmr)
from .engine import (AttackConfig, EvolutionResult, GalleryIndex,
                     evaluate_masterprint, evolve_masterprint,
                     identity_best_scores, matching_score, random_baseline,
                     run_evolution)
from . import cmaes, synthetic

__all__ = [
    "GrayImage", "load_image", "save_image",
    "GeneratorModel", "generate", "generate_raw", "load_generator",
    "load_generator_file", "save_generator",
    "Minutia", "MinutiaeTemplate", "extract",
    "MatcherParams", "MATCHERS", "build_edge_table", "is_match", "match_score",
    "Gallery", "MatchThreshold", "TemplateGallery", "empirical_fmr", "enroll",
    "impostor_scores", "ingest", "threshold_for_fmr",
    "AttackConfig", "EvolutionResult", "GalleryIndex", "evaluate_masterprint",
    "evolve_masterprint", "identity_best_scores", "matching_score",
    "random_baseline", "run_evolution",
    "cmaes", "synthetic",
]
