from .ar import Adapter, ARDecoder, ar_logits, ar_sample, nll_loss
from .mesh import Mesh, extract_mesh, read_obj, sample_points
from .vq import VQAutoencoder, quantize, revive_codes, voxel_iou
