from .analogy import (LinearPathway, PCAFitError, PCAModel, build_linear_pathway,
                      linear_analogy_demo, pca_fit, pca_project, pca_reconstruct)
from .attacks import fgsm_attack, random_sign_perturbation
from .grid import EvalReport, eval_grid, ssim_histogram
from .metrics import l1_distance, ssim
from .theory import (DiscreteJointDist, gan_value, grid_search_discriminator, jsd,
                     optimal_discriminator)
from .synthetic import SyntheticExperimentConfig, run_synthetic_experiment

__all__ = [
    "DiscreteJointDist", "EvalReport", "LinearPathway", "PCAFitError", "PCAModel",
    "SyntheticExperimentConfig", "build_linear_pathway", "eval_grid", "fgsm_attack",
    "gan_value", "grid_search_discriminator", "jsd", "l1_distance",
    "linear_analogy_demo", "optimal_discriminator", "pca_fit", "pca_project",
    "pca_reconstruct", "random_sign_perturbation", "run_synthetic_experiment",
    "ssim", "ssim_histogram",
]
