"""IS / FID / KID and a PCA scatter, using the offline random-projection extractor.

Swap in ``metrics.InceptionExtractor()`` (needs torchvision and its weights)
for numbers comparable with standard Inception-based scores.
"""
import sys
from pathlib import Path

import numpy as np

from scoreforge import metrics, report
from scoreforge.dataprep import load_image_dir

sys.path.insert(0, str(Path(__file__).parent))
from _data import crop_manifest  # noqa: E402

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demos/out") / "metrics"
crop_manifest(out / "hw_a", "handwritten", n=60, seed=0)
crop_manifest(out / "hw_b", "handwritten", n=60, seed=1)
crop_manifest(out / "printed", "printed", n=60, seed=2)

ex = metrics.RandomProjectionExtractor(dim=64, seed=0)
same = metrics.evaluate(out / "hw_a", out / "hw_b", ex, splits=5)
other = metrics.evaluate(out / "hw_a", out / "printed", ex, splits=5)
print("             FID       KID")
print(f"hw vs hw   {same.fid:8.4f}  {same.kid:8.5f}")
print(f"hw vs pr   {other.fid:8.4f}  {other.kid:8.5f}")
print("table row:", other.table_row("printed"))

# by hand: FID between N(0, 1) and N(1, 4) in one dimension is 1 + (1 + 4 - 2*2) = 2
a = metrics.FeatureMoments(np.array([0.0]), np.array([[1.0]]))
b = metrics.FeatureMoments(np.array([1.0]), np.array([[4.0]]))
print("1D FID:", metrics.frechet_distance(a, b))

sets = [(name, ex.embed(load_image_dir(out / name)[1])) for name in ("hw_a", "printed")]
pca = metrics.pca_project(sets)
print("explained variance:", np.round(pca.explained_variance_ratio, 3))
metrics.save_pca_csv(pca, out / "pca.csv")
report.plot_pca(pca, out / "pca.png", "handwritten vs printed")
print("wrote", out / "pca.png")
