"""Fit a brush-stroke painting to a natural image crop by gradient descent.

No networks involved: the soft rasterizer's gradients drive 32 stroke
parameter vectors straight down the pixel MSE.  Writes the target, the
painted result, and the loss curve into ./out/.

Usage:  python3 demos/demo_direct_fit.py [--n 32] [--iters 300] [--seed 0]
"""

import argparse
import json
import os

import numpy as np

from strokescan import imageio, tiling
from strokescan.raster import Canvas
from strokescan.training import fit_strokes_direct


def natural_target(res=64):
    try:
        from skimage import data
        from skimage.transform import resize
        img = resize(data.astronaut()[80:336, 120:376], (res, res),
                     anti_aliasing=True)
        return Canvas(res, res, np.clip(img, 0.0, 1.0))
    except ImportError:
        from strokescan.training import toy_images
        return toy_images(1, seed=0, res=res)[0]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=32)
    ap.add_argument("--iters", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    os.makedirs("out", exist_ok=True)
    target = natural_target()
    imageio.save_png("out/fit_target.png", target)

    print(f"fitting {args.n} strokes for {args.iters} iterations ...")
    seq, mse, curve = fit_strokes_direct(target, args.n, args.iters,
                                         seed=args.seed)
    print(f"best MSE {mse:.5f} (started at {curve[0]:.5f})")

    painted = tiling.paint_strokes(seq, target.height)
    imageio.save_png("out/fit_painted.png", painted)
    with open("out/fit_curve.json", "w") as f:
        json.dump(curve, f)
    print("wrote out/fit_target.png, out/fit_painted.png, out/fit_curve.json")


if __name__ == "__main__":
    main()
