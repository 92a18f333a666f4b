from .brain import BrainForwardModel, FmriTrial, make_subject, simulate_fmri, stimulus_response
from .dataset import Dataset, build_dataset, plan_dataset, select_frames
from .render import ViewSet, render_views
from .shapes import (CORE_CATEGORIES, EmptyShapeError, InvalidSpecError, Primitive, ShapeSpec,
                     VoxelGrid, generate_shape, sample_spec)
