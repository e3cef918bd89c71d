"""Fit a blendshape body model and per-frame cameras to 2D keypoints, masks and flow."""
from .autodiff import LossWeights, ParamLayout, Problem, evaluate, pack, unpack
from .camera import CameraParams, ImageGeometry, project
from .errors import (ConfigurationError, DegenerateFacet, DepthViolation, DivergenceError,
                     EmptyObservation, MocapFitError, ParseError, SceneGenError)
from .fitting import (FinetuneConfig, FitConfig, FitReport, fit_direct, pretrain_regressor,
                      scene_metrics, selfsup_finetune)
from .mesh import BlendshapeModel, BodyParams, default_model, mesh_vertices
from .scenegen import SceneSpec, sample_scene
from .visibility import compute_visibility, facet_visibility, facet_visibility_accelerated

__version__ = "0.1.0"
