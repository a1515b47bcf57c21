"""Progressive growing: the stage schedule, the fade-in ramp, and a 4 -> 16 px run."""
import sys
from pathlib import Path

import torch

from scoreforge import progan
from scoreforge.traincore import default_config

sys.path.insert(0, str(Path(__file__).parent))
from _data import handwritten_manifest  # noqa: E402

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demos/out") / "progan"

# the default schedule: six 30-epoch stages from 4 to 128 px
sched = progan.GrowthSchedule.from_config(default_config("progan"))
for r, e, b in zip(sched.resolutions, sched.epochs_per_stage, sched.batch_size_per_stage):
    print(f"{r:4d} px  {e} epochs  batch {b}")
print("total epochs", sched.total_epochs)

# alpha ramps over the first half of every stage after the first
print("alpha over a 10-step stage:", [round(progan.fade_alpha(t, 10, 0.5), 2) for t in range(10)])

# each stage adds a block; the output doubles in size
gen = progan.ProganGenerator(latent_dim=32, channels=32)
z = torch.randn(1, 32)
print("stage shapes:", [tuple(gen(z, s).shape[-2:]) for s in range(6)])

manifest = handwritten_manifest(out / "data", n=96)
cfg = default_config("progan", resolution=16, epoch_schedule=(1, 1, 2), batch_schedule=(32, 32, 16),
                     channels=32, latent_dim=32, seed=0)
result = progan.train_progan(cfg, manifest, output_dir=out / "run")
log = result.losslog
for stage in range(3):
    rows = [i for i, s in enumerate(log.series("stage")) if s == stage]
    print(f"stage {stage}: {len(rows)} steps, loss_d {log.series('loss_d')[rows[-1]]:+.3f}")

gen = progan.generator_from_checkpoint(result.checkpoint)
for res in (4, 8, 16):
    progan.generate(gen, 4, out / f"samples_{res}", resolution=res)
print("wrote samples at 4, 8 and 16 px")
