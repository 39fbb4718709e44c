"""
Faithfulness: insertion, deletion and the denoising threshold
=============================================================

Deletion blackens the most salient pixels first and watches the class
probability fall; insertion reveals them on a black canvas and watches it
rise. A good map has a high insertion area and a low deletion area.

Run from the repository root.
"""
from pathlib import Path

from camfuse.cam import grad_cam
from camfuse.fusion import FusionConfig, fusion_cam
from camfuse.imaging import load_image
from camfuse.metrics import overall_score, perturbation_curve
from camfuse.model import load_weights

data = Path("tests/data")
model = load_weights(data / "golden.camf")
image = load_image(data / "test_image.png")
c = 1

# %% curves for Grad-CAM and the fused map
for name, m in [("grad-cam", grad_cam(model, image, c)), ("fused", fusion_cam(model, image, c)[0])]:
    ins = perturbation_curve(model, image, m, c, "insertion")
    dele = perturbation_curve(model, image, m, c, "deletion")
    print(f"{name:9s} insertion {ins.auc:.4f}  deletion {dele.auc:.4f}  "
          f"overall {overall_score(ins.auc, dele.auc):.4f}")
    print("   deletion at 0/10/20/50%:", [round(float(dele.scores[k]), 4) for k in (0, 10, 20, 50)])

# %% the threshold trades noise for coverage; averaged over 20 held-out shapes
import numpy as np

from camfuse.data import gen_shapes_dataset

held_out = gen_shapes_dataset(900, seed=42, noise_level=0.1).subset(800, 820)
for theta in (0, 10, 30, 60, 90):
    scores = []
    for img, label in zip(held_out.images, held_out.labels):
        m, _ = fusion_cam(model, img, label, FusionConfig(theta=theta))
        ins = perturbation_curve(model, img, m, label, "insertion").auc
        dele = perturbation_curve(model, img, m, label, "deletion").auc
        scores.append(overall_score(ins, dele))
    print(f"theta {theta:2d}  mean overall {np.mean(scores):.4f}")

# %% the same sweep over a whole test split, from the shell:
#    camfuse gen-data --out-dir shapes
#    camfuse sweep-theta --weights tests/data/golden.camf --data-dir shapes/test --out-dir sweep
