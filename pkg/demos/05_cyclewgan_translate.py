"""Printed -> handwritten translation with a tiny CycleWGAN.

Two generators (printed->hw, hw->printed) and two Wasserstein critics. After a
couple of epochs the outputs are still noise; the point is the plumbing and
the contact sheet layout.
"""
import sys
from pathlib import Path

import torch

from scoreforge import cyclewgan, report
from scoreforge.traincore import default_config

sys.path.insert(0, str(Path(__file__).parent))
from _data import crop_manifest  # noqa: E402

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demos/out") / "cyclewgan"
printed = crop_manifest(out / "printed", "printed", n=40, size=32, seed=1)
handwritten = crop_manifest(out / "handwritten", "handwritten", n=40, size=32, seed=2)

cfg = default_config("cyclewgan", resolution=32, channels=8, n_residual_blocks=3, batch_size=8, epochs=2, seed=0)
result = cyclewgan.train_cyclewgan(cfg, printed, handwritten, output_dir=out / "run")
print("logged series:", result.losslog.names)
print("plot:", report.plot_losses(result.losslog, out / "losses.png", "CycleWGAN")[1], "curves")

model = cyclewgan.model_from_checkpoint(result.checkpoint)
# weight clipping keeps every critic parameter inside [-0.01, 0.01]
print("max |critic weight|:", max(float(p.detach().abs().max()) for p in model.d_h.parameters()))

from scoreforge.dataprep import load_batch  # noqa: E402

x = load_batch(printed, list(range(6)), 32)
y = cyclewgan.translate(model, x, "p2h")
back = cyclewgan.translate(model, y, "h2p")
print("shapes", tuple(x.shape), "->", tuple(y.shape), "; round-trip MSE", round(float(torch.mean((back - x) ** 2)), 4))
cyclewgan.contact_sheet(x, y, out / "contact_sheet.png")
print("wrote", out / "contact_sheet.png")
