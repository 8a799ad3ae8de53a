"""Selecting the boundary points that both sensors can vouch for.

Canny edges come from the frame, event boundaries from pixels that fired.
Patches where the frame and event temporal gradients agree get a high
quality score; edges in those patches form the reference template that
the fusion stage later clusters and tracks.

Run:  python demos/02_boundary_template.py
"""

import numpy as np

from stflow import boundary as bd
from stflow.errors import EmptyTemplate
from stflow.gradient import event_temporal_gradient, frame_temporal_gradient, gradient_similarity
from stflow.synth import SceneSpec, degrade, gen_scene

C = 0.05
sharp = gen_scene(SceneSpec(texture="step", flow=(2.0, 1.0), seed=1, preroll=0.5))

for label, bundle in (("sharp", sharp), ("blurred", degrade(sharp, 8, 1, step=0.1))):
    frame = bundle.frames[0].data
    U = bundle.gt_flow_total
    bf = bd.canny(frame)
    be = bd.project_events_boundary(bundle.events)
    gd = gradient_similarity(frame_temporal_gradient(frame, U), event_temporal_gradient(bundle.slices, U, C), 16, 8)
    prob = bd.patch_probability(gd, frame.shape, 16, 8, tau=0.1)
    try:
        tmpl = bd.build_template(bf, be, prob, threshold=0.5)
        kept = len(tmpl)
        classes = np.bincount(tmpl.classes, minlength=10)
    except EmptyTemplate:
        kept, classes = 0, np.zeros(10, int)
    print(f"{label:>8}: {int(bf.sum())} frame edge px, {int(be.sum())} event px, "
          f"mean patch quality {prob.mean():.3f}, template {kept} points")
    print(f"          class histogram (0 = reliable): {classes.tolist()}")
