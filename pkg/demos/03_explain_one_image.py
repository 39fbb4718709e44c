"""
Explaining one prediction
=========================

Grad-CAM and Score-CAM disagree in useful ways: one is sharp but noisy,
the other smooth but diffuse. The fused map keeps pixels where both agree
at full strength and averages where they do not.

Run from the repository root; uses the reference weights in tests/data.
"""
from pathlib import Path

from camfuse.fusion import FusionConfig, fusion_cam
from camfuse.imaging import load_image, load_mask, save_heatmap
from camfuse.metrics import localization_mass
from camfuse.model import forward, load_weights
from camfuse.preprocess import preprocess

data = Path("tests/data")
model = load_weights(data / "golden.camf")
image = load_image(data / "test_image.png")
mask = load_mask(data / "test_mask.png")

probs = forward(model, preprocess(image)).probs
c = int(probs.argmax())
print("predicted class", c, "with probability", round(float(probs[c]), 4))

# %% run the pipeline and keep every intermediate
fused, diag = fusion_cam(model, image, c, FusionConfig(theta=10, record_diagnostics=True))
print("betas: denoised grad %.4f  region %.4f  combined %.4f" % (
    diag.betas.beta_degrad, diag.betas.beta_region, diag.betas.beta_gradregion))
# This image is one of the few where masking with the combined map scores
# below the black baseline. Its beta clamps to zero, so the fused map falls
# back to the rescaled Score-CAM map alone.

# %% how much of each map falls on the object
for name, m in [("grad-cam", diag.grad), ("score-cam", diag.region), ("fused", fused)]:
    print(f"{name:10s} localization mass {localization_mass(m, mask):.3f}")

# %% heatmaps over the input
out = Path("demo_output")
out.mkdir(exist_ok=True)
for name, m in [("grad_cam", diag.grad), ("score_cam", diag.region),
                ("similarity", diag.similarity), ("fused", fused)]:
    save_heatmap(m, image, out / f"{name}.png")
print("wrote", sorted(p.name for p in out.glob("*.png")))
