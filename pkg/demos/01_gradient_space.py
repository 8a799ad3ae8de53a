"""Frames and events speak the same language once both become temporal gradients.

A frame gives a brightness derivative through the flow, ``-grad(I) . U``.
Events give the same derivative by counting threshold crossings and moving
them back along the flow.  On a sharp scene the two maps agree to within a
couple of contrast thresholds; blurring the frame breaks the agreement, and
the boundary-versus-gradient histogram divergence picks that up.

Run:  python demos/01_gradient_space.py
"""

import numpy as np

from stflow import boundary as bd
from stflow.gradient import event_temporal_gradient, frame_temporal_gradient, spatial_gradient
from stflow.synth import SceneSpec, degrade, gen_scene

C = 0.05
scene = gen_scene(SceneSpec(flow=(3.0, 0.0), C=C, seed=0))
U = scene.gt_flow_total
frame = scene.frames[0].data
print(f"scene: {frame.shape[1]}x{frame.shape[0]}, {len(scene.events)} events over {scene.T} slices")

gf = frame_temporal_gradient(frame, U)
ge = event_temporal_gradient(scene.slices, U, C)
g = spatial_gradient(frame)
textured = np.hypot(g.ix, g.iy) > 0.01
gap = np.abs(gf - ge)[textured].mean()
print(f"mean |frame - event| temporal gradient on textured pixels: {gap:.4f} ({gap / C:.2f} C)")
print(f"correlation between the two maps: {np.corrcoef(gf[textured], ge[textured])[0, 1]:.3f}")

# Longer exposure -> blurrier frame -> larger disagreement with the events.
noisy = gen_scene(SceneSpec(noise_sigma=3.0, flow=(3.0, 0.0), seed=0, preroll=0.5))
print("\nblur length  KL(boundary || gradient)")
for blur_len in (8, 4, 1):
    blurred = degrade(noisy, blur_len, 1, step=0.1).frames[0].data
    kl = bd.consistency_kl(blurred, noisy.events, noisy.slices, noisy.gt_flow_total, C)
    print(f"{blur_len:>11d}  {kl:.3f}")
