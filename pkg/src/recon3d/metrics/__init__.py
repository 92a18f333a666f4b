from .encoding import pearson_map, ridge_fit, roi_contrast
from .image import ShapeError, perceptual_distance, ssim
from .points import (NumericalError, PointFeatureNet, chamfer, emd_exact, emd_sinkhorn, fpd,
                     frechet_distance, nearest_mean, object_fpd)
from .report import COLUMNS, PUBLISHED_FULL, MetricReport, read_csv, to_csv, to_text, wins
from .semantic import nway_accuracy, nway_topk
