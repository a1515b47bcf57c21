"""Shared helper: write a small synthetic crop set and return its manifest."""
from scoreforge import dataprep, synthetic
from scoreforge.dataprep import Domain, ImageCrop


def crop_manifest(directory, domain, n=64, size=64, seed=0):
    directory.mkdir(parents=True, exist_ok=True)
    stack = synthetic.crop_stack(n, size, domain, seed=seed)
    crops = [ImageCrop(px, Domain(domain), f"s{i // 4:03d}", (i % 4) * size) for i, px in enumerate(stack)]
    dataprep.save_crops(crops, directory)
    manifest = dataprep.build_manifest(directory, domain)
    manifest.save(dataprep.manifest_path(directory, domain))
    return manifest


def handwritten_manifest(directory, n=64, size=64, seed=0):
    return crop_manifest(directory, "handwritten", n, size, seed)
