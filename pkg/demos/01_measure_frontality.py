"""
Scoring how canonical a face image is
=====================================

A canonical view is frontal and sharp. The score combines two terms:
left/right asymmetry (low when the face is frontal) minus a weighted
nuclear norm (high when the image is sharp). Lower score = better
canonical candidate.
"""

import numpy as np

from canonface import frontality, synthetic

rng = np.random.default_rng(0)

# a synthetic face is mirror-symmetric by construction
base, _ = synthetic.synth_face(rng)

# degrade it three ways: rotate out of plane (approximated by shear),
# defocus (gaussian blur), and lose resolution (down/up scaling)
variants = [
    ("base", base),
    ("sheared", synthetic.shear_h(base, 0.12)),
    ("blurred", synthetic.blur(base, sigma=2.0)),
    ("lowres", synthetic.downscale_upscale(base, 4)),
]

cfg = frontality.FrontalityConfig(lam=0.02)
print(f"{'image':<10} {'asymmetry':>12} {'nuclear':>10} {'score':>10}")
for name, img in variants:
    scored = frontality.frontality_measure(img, cfg, image_id=name)
    print(f"{name:<10} {scored.symmetry_term:12.4f} "
          f"{scored.nuclear_term:10.3f} {scored.score:10.4f}")

# the base image is perfectly symmetric, so its asymmetry term is 0 and
# only sharpness differentiates it; corruption either raises asymmetry
# (shear) or lowers the nuclear norm (blur, lowres), and both move the
# combined score up
print()
print("lowest score wins:", frontality.select_canonical(variants, cfg))
