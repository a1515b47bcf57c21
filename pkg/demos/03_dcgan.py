"""A short DCGAN run on synthetic handwritten crops, then samples and a loss plot.

The full-size run is ``scoreforge train dcgan`` with the default config
(100 epochs, batch 128); this one takes a few seconds.
"""
import sys
from pathlib import Path

from scoreforge import dcgan, report
from scoreforge.traincore import default_config

sys.path.insert(0, str(Path(__file__).parent))
from _data import handwritten_manifest  # noqa: E402

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demos/out") / "dcgan"
manifest = handwritten_manifest(out / "data", n=128)

cfg = default_config("dcgan", epochs=3, batch_size=32, channels=16, seed=0)
print(cfg.to_toml())
result = dcgan.train_dcgan(cfg, manifest, output_dir=out / "run")
log = result.losslog
print(f"{len(log)} steps; final loss_d={log.series('loss_d')[-1]:.3f} loss_g={log.series('loss_g')[-1]:.3f}")
print("mean D(x) over the last epoch:", round(float(log.series("d_x")[-4:].mean()), 3))

gen = dcgan.generator_from_checkpoint(result.checkpoint)
paths = dcgan.generate(gen, 8, out / "samples", seed=1)
print("samples:", [p.name for p in paths[:3]], "...")
print("plots:", [p.name for p in report.loss_report(log, out / "plots")[0]])
