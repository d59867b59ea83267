"""
Sinusoidal gauge with shift-invariant similarity
================================================

Pairs of sin/cos features give a cosine similarity that depends only on the
offset between two points.  Multiplying the encoding by a learned amplitude
feature and feeding it to a small MLP improves a grid-based field.
"""

import numpy as np

from gaugefields.gauge import InfoInvEncoder, cosine_similarity
from gaugefields.presets import preset_rows
from gaugefields.cli import run_config

enc = InfoInvEncoder(3)
rng = np.random.default_rng(0)
m, n, t = rng.normal(size=(3, 5, 3))
print("similarity        ", cosine_similarity(enc.encode(m).data, enc.encode(n).data).round(4))
print("after common shift", cosine_similarity(enc.encode(m + t).data, enc.encode(n + t).data).round(4))

for row in preset_rows("infoinv-gain", seed=0):
    metrics = run_config(row.config)
    print(row.label, {k: (round(v, 2) if isinstance(v, float) else v) for k, v in metrics.items()})
