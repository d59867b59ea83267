"""
Codebook utilization of a discrete gauge
========================================

Every grid vertex picks one of N codebook entries.  Without regularization
a handful of entries end up serving the whole grid.  The same run with the
information regularizer uses nearly all of them.  Each run takes a few
minutes on one core.
"""

import numpy as np

from gaugefields.presets import preset_rows
from gaugefields.train import selection_counts, train

for row in preset_rows("collapse-discrete", seed=0):
    result = train(row.config)
    gauge = result.model.gauge
    for level in range(gauge.levels):
        counts = selection_counts(gauge, level)
        used = np.count_nonzero(counts)
        top = np.sort(counts)[::-1][:3]
        print(f"{row.label:8s} level {level}: {used}/{gauge.entries} entries used, busiest {top.tolist()}")
