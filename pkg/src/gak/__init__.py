"""Mesh-anchored 3D Gaussians for 3D-consistent multi-view diffusion sampling."""
from .camera import Camera
from .errors import InvalidInputError, MalformedFileError, ValidationError
from .gaussians import GaussianSet
from .mesh import AnchorSet, LocalCoords, TriMesh
from .plan import StepPlan, build_step_plan
from .render import ImageBuffer, render
from .schedule import NoiseSchedule, make_schedule

__version__ = "0.1.0"
