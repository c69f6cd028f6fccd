"""Regenerates data/toy_group: four composited images of the same soft-edged
two-part object over different backgrounds, with their alpha labels."""
import json
import pathlib

import numpy as np
from PIL import Image

ROOT = pathlib.Path(__file__).resolve().parent.parent / "data" / "toy_group"


def soft_disc(h, w, cy, cx, r, soft):
    yy, xx = np.mgrid[0:h, 0:w]
    d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    return np.clip((r + soft - d) / (2 * soft), 0.0, 1.0)


def main():
    rng = np.random.default_rng(7)
    (ROOT / "group0" / "images").mkdir(parents=True, exist_ok=True)
    (ROOT / "group0" / "labels").mkdir(parents=True, exist_ok=True)
    sizes = [(80, 96), (96, 80), (72, 72), (88, 104)]
    fg_color = np.array([0.85, 0.15, 0.1])
    for i, (h, w) in enumerate(sizes):
        cy, cx = h * rng.uniform(0.4, 0.6), w * rng.uniform(0.35, 0.5)
        r = min(h, w) * 0.18
        body = soft_disc(h, w, cy, cx, r, 2.0)
        head = soft_disc(h, w, cy - r * 0.2, cx + r * 1.6, r * 0.6, 1.5)
        alpha = np.maximum(body, head)
        base = rng.uniform(0.2, 0.7, size=3)
        yy, xx = np.mgrid[0:h, 0:w]
        bg = base[None, None, :] + 0.25 * np.stack(
            [np.sin(xx / 9.0 + i), np.cos(yy / 11.0 - i), np.sin((xx + yy) / 13.0)], axis=-1)
        bg = np.clip(bg, 0, 1) * 0.6
        img = alpha[..., None] * fg_color + (1 - alpha[..., None]) * bg
        Image.fromarray(np.round(img * 255).astype(np.uint8)).save(ROOT / "group0" / "images" / f"frame{i}.png")
        Image.fromarray(np.round(alpha * 255).astype(np.uint8)).save(ROOT / "group0" / "labels" / f"frame{i}.png")
    meta = {"kind": "matting", "category": "toy", "reference_indices": [0]}
    (ROOT / "group0" / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")


if __name__ == "__main__":
    main()
