"""Toy staff images for tests and demos.

Printed staves get straight lines and filled elliptical note heads; the
handwritten flavour wobbles its lines, jitters the heads and varies stroke
thickness. Nothing here imitates real notation beyond that.
"""

from __future__ import annotations

import numpy as np

from .dataprep import Domain, SourceImage


def staff_image(height: int, width: int, rng: np.random.Generator, handwritten: bool = False) -> np.ndarray:
    img = np.full((height, width), 255.0)
    yy, xx = np.mgrid[0:height, 0:width]
    gap = height / 8.0
    top = height / 2.0 - 2 * gap
    thickness = max(1.0, height / 90.0)
    for k in range(5):
        y = top + k * gap
        if handwritten:
            y = y + rng.normal(0, gap / 12) + (gap / 10) * np.sin(xx / (width / rng.uniform(2, 6)) + rng.uniform(0, 6))
        t = thickness * (rng.uniform(0.7, 1.6) if handwritten else 1.0)
        img = np.minimum(img, np.where(np.abs(yy - y) <= t / 2, 20.0, 255.0))
    n_notes = max(1, width // int(gap * 3))
    for i in range(n_notes):
        cx = (i + 0.5) * width / n_notes + (rng.normal(0, gap / 2) if handwritten else 0.0)
        cy = top + rng.integers(0, 9) * gap / 2 + (rng.normal(0, gap / 6) if handwritten else 0.0)
        a, b = gap * 0.65, gap * 0.45
        if handwritten:
            a *= rng.uniform(0.7, 1.3)
            b *= rng.uniform(0.7, 1.3)
        head = ((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2 <= 1.0
        img[head] = 10.0
        stem_x = int(round(cx + a * 0.9))
        y0, y1 = int(max(0, cy - 3.2 * gap)), int(cy)
        if 0 <= stem_x < width:
            img[y0:y1, max(0, stem_x - int(thickness)):stem_x + 1] = 10.0
    if handwritten:
        img = img + rng.normal(0, 12, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def staff_sources(n: int, height: int, width: int, domain: Domain | str, seed: int = 0,
                  rgb: bool = False) -> list[SourceImage]:
    rng = np.random.default_rng(seed)
    domain = Domain(domain)
    out = []
    for i in range(n):
        px = staff_image(height, width, rng, handwritten=domain is Domain.HANDWRITTEN)
        if rgb:
            px = np.repeat(px[:, :, None], 3, axis=2)
        out.append(SourceImage(px, domain, f"page{i:03d}"))
    return out


def crop_stack(n: int, size: int, domain: Domain | str = Domain.HANDWRITTEN, seed: int = 0) -> np.ndarray:
    """``n`` square grayscale crops of side ``size`` (uint8)."""
    rng = np.random.default_rng(seed)
    hand = Domain(domain) is Domain.HANDWRITTEN
    return np.stack([staff_image(size, size, rng, handwritten=hand) for _ in range(n)])
