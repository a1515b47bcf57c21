"""Cut staff images into square crops and index them in a manifest.

Run: python demos/01_crops_and_manifest.py [output_dir]
"""
import sys
from pathlib import Path

from scoreforge import dataprep, synthetic

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demos/out") / "crops"
out.mkdir(parents=True, exist_ok=True)

# four RGB "scans" of printed staves, 100 px tall and 460 px wide
pages = synthetic.staff_sources(4, 100, 460, "printed", seed=0, rgb=True)
print("page shape:", pages[0].pixels.shape)

# grayscale first, then the height is rescaled to the crop size and the width is walked
gray = dataprep.to_grayscale(pages[0])
crops = dataprep.extract_square_crops(gray, 64)
print("crops from one page (stride 64):", len(crops), "offsets", [c.offset_x for c in crops])

# overlapping crops buy volume
print("with stride 16:", len(dataprep.extract_square_crops(gray, 64, stride=16)))

for page in pages:
    dataprep.save_crops(dataprep.extract_square_crops(dataprep.to_grayscale(page), 64), out)

# eval split is assigned per source page so near-duplicate crops never straddle it
manifest = dataprep.build_manifest(out, "printed", eval_fraction=0.25)
manifest.save(dataprep.manifest_path(out, "printed"))
print("manifest:", manifest.count, "crops,", len(manifest.indices("eval")), "held out")
print("first entry:", manifest.entries[0])

batch = dataprep.load_batch(manifest, [0, 1, 2], resolution=32)
print("batch", tuple(batch.shape), "range", float(batch.min()), float(batch.max()))
