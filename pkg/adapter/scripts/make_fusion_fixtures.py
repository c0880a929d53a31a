#!/usr/bin/env python3
"""Regenerate test/fixtures/fusion_cases.json from the scenefuse package.

The adapter carries its own restatement of the embedding fusion formulas so
captures can be processed without Python in the loop; this script pins that
restatement to the reference implementation. Run it whenever the reference
changes, then re-run the adapter test suite.
"""

import json
from pathlib import Path

import numpy as np

from scenefuse import (
    cosine,
    fuse_for_scheme,
    fuse_multiscale_direct,
    fuse_multiscale_weighted,
    fuse_multiview_direct,
    fuse_multiview_global,
)

OUT = Path(__file__).resolve().parent.parent / "test" / "fixtures" / "fusion_cases.json"
SEED = 90210
CASES = 200


def draw(rng, dim):
    # Offset away from zero so cosine never sees a zero vector.
    return rng.uniform(-1.0, 1.0, size=dim) + 0.05


def main():
    rng = np.random.default_rng(SEED)
    cases = []
    for _ in range(CASES):
        dim = int(rng.integers(2, 33))
        n_views = int(rng.integers(1, 6))
        n_crops = int(rng.integers(1, 5))
        views = [draw(rng, dim) for _ in range(n_views)]
        globals_ = [draw(rng, dim) for _ in range(n_views)]
        crop_sets = [[draw(rng, dim) for _ in range(n_crops)] for _ in range(n_views)]
        scheme = int(rng.integers(1, 5))
        cases.append(
            {
                "views": [v.tolist() for v in views],
                "globals": [g.tolist() for g in globals_],
                "crop_sets": [[c.tolist() for c in crops] for crops in crop_sets],
                "scheme": scheme,
                "expected": {
                    "cosine": cosine(views[0], globals_[0]),
                    "multiscale_direct": fuse_multiscale_direct(crop_sets[0]).tolist(),
                    "multiscale_weighted": fuse_multiscale_weighted(crop_sets[0]).tolist(),
                    "multiview_direct": fuse_multiview_direct(views).tolist(),
                    "multiview_global": fuse_multiview_global(views, globals_).tolist(),
                    "for_scheme": fuse_for_scheme(scheme, crop_sets, globals_).tolist(),
                },
            }
        )
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps({"seed": SEED, "cases": cases}) + "\n")
    print(f"wrote {CASES} cases to {OUT}")


if __name__ == "__main__":
    main()
