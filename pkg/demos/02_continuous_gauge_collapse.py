"""
Collapse of a learned 3D -> 2D gauge, and its rescue
====================================================

A texture-map field looks up color at g(x) in the unit square.  Trained on
reconstruction alone the mapping g squeezes the surface into a few cells of
the square.  The information regularizer keeps it spread out.
Each run takes well under a minute on one core.
"""

from gaugefields.cli import splat_image
from gaugefields.presets import preset_rows
from gaugefields.scene import write_ppm
from gaugefields.train import evaluate, gauge_metrics, surface_samples, train
from gaugefields.train.metrics import occupancy_cells

for row in preset_rows("collapse-continuous", seed=0):
    result = train(row.config)
    data = result.data
    held_out = evaluate(result.model, data.test_rig, data.test_images, row.config.samples)
    occ = gauge_metrics(result.model, data)["occupancy"]
    print(f"{row.label:8s} held-out PSNR {held_out.mean:5.2f} dB   occupancy {occ:.3f}")

    # where do the visible surface points land in the square?
    s = surface_samples(result.model, data.train_rig.resized(32, 32), row.config.samples)
    _, uv = occupancy_cells(result.model.gauge, s.points, s.weights)
    write_ppm(f"gauge_{row.label}.ppm", splat_image(uv, s.colors[s.weights >= 0.01]))
