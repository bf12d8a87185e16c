"""The occlusion mask against the exactly known occluded region.

A rectangle floats 2 m in front of a plane at 4 m. After a sideways camera
move, part of the plane seen in the new view was hidden behind the rectangle
in the old one. The synthetic scene gives that set in closed form.
"""

import numpy as np
from scipy import ndimage

from docvo import PoseSE3, inverse_warp
from docvo.geometry import invert
from docvo.photometric import occlusion_mask
from docvo.synth import default_intrinsics, make_occluder_scene, make_plane_scene, occluded_set, render_view

K = default_intrinsics()
scene = make_occluder_scene(make_plane_scene(K, depth=4.0, tilt_deg=(0.0, 10.0), seed=5), [0.0, 0.0, 2.0], (0.4, 0.3))
rel = PoseSE3([0.0, 0.0, 0.0], [0.3, 0.0, 0.05])
src_img, src_depth = render_view(scene, np.eye(4))
_, tgt_depth = render_view(scene, invert(rel.matrix))

warp = inverse_warp(tgt_depth, rel.matrix, src_img, K, src_depth=src_depth)
mask = occlusion_mask(tgt_depth, warp, d_m=5.0)
occ = occluded_set(scene, invert(rel.matrix), np.eye(4))
ring = ndimage.binary_dilation(occ) & ~ndimage.binary_erosion(occ)
inner = warp.valid & ~ring

print(f"occluded pixels (closed form): {occ.sum()}")
print(f"masked among them:             {np.mean(mask[occ & inner] == 0):.1%}")
print(f"masked among visible pixels:   {np.mean(mask[~occ & inner] == 0):.2%}")
rows = slice(int(K.cy) - 2, int(K.cy) + 3)
print("\nrows through the occluder (o = occluded, x = masked, # = both):")
for o, m in zip(occ[rows], mask[rows] == 0):
    print("".join("#" if a and b else "o" if a else "x" if b else "." for a, b in zip(o, m)))
