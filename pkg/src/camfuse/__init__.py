"""Grad-CAM, Score-CAM and Fusion-CAM saliency maps over a small NumPy CNN,
with faithfulness metrics (Average Drop/Increase, insertion/deletion AUC)."""
from .cam import grad_cam, normalize_map, score_cam
from .data import SplitMix64, gen_shapes_dataset
from .fusion import (FusionConfig, combine, contribution_weight, denoise, fuse, fusion_cam,
                     reweight, similarity)
from .imaging import load_image, save_heatmap
from .metrics import (average_drop, average_increase, localization_mass, overall_score,
                      perturbation_curve)
from .model import MicroCNN, forward, grad_wrt_layer, load_weights, save_weights, train_sgd
from .preprocess import Preprocessing, preprocess

__version__ = "0.1.0"
