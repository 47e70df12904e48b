"""Correspondence-free camera pose estimation by globally optimal alignment of spherical mixtures.

A 3D point-set is summarized by a Gaussian mixture and the bearing vectors of
an image by a von Mises-Fisher mixture on the unit sphere. For a candidate
camera pose, each Gaussian is mapped to a vMF component on the camera's
sphere, and the pose is scored by the closed-form L2 distance between the two
spherical mixtures. Branch-and-bound over rotation and translation cubes,
combined with local gradient refinement, minimizes that score to a
certified gap.
"""

__version__ = "0.1.0"

from .bench import BenchParams, generate_scene, grid_search_oracle, is_success, pose_errors, run_trials
from .mixtures import (Gmm, LabeledBearingSet, LabeledPointSet, MixtureSettings, SemanticMixturePair, Vmfmm,
                       build_semantic_mixtures)
from .objective import ObjectiveContext, objective_gradient, objective_value
from .se3 import Pose, PoseDomain, RotationCube, TranslationCuboid, torus_cover
from .solver import SolverConfig, SolverReport, local_refine, solve

__all__ = [
    "BenchParams", "Gmm", "LabeledBearingSet", "LabeledPointSet", "MixtureSettings", "ObjectiveContext", "Pose",
    "PoseDomain", "RotationCube", "SemanticMixturePair", "SolverConfig", "SolverReport", "TranslationCuboid",
    "Vmfmm", "build_semantic_mixtures", "generate_scene", "grid_search_oracle", "is_success", "local_refine",
    "objective_gradient", "objective_value", "pose_errors", "run_trials", "solve", "torus_cover",
]
