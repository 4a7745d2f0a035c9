"""Look for expressed runs outside annotated exons using the homogeneous HMM.

Run: python demos/04_novel_transcripts.py
"""

import numpy as np

from _truth import EMISSIONS
from tilehmm.hmm import ModelParams, ModelSpec, classify_probes, fit
from tilehmm.region import expressed_runs
from tilehmm.simulate import SimScenario, simulate

# a mostly silent intergenic stretch with a few planted transcribed blocks
n = 30_000
stay = np.array([0.995, 0.9, 0.9, 0.9])
tr = (1 - stay)[:, None] / 3 * (1 - np.eye(4)) + np.diag(stay)
truth = ModelParams(ModelSpec(False, True), EMISSIONS, tr[None])
cats = np.full(n, 2)
data = simulate(SimScenario(truth, cats, seed=4))

report = fit(data.series, ModelSpec(False, True))
labels, _ = classify_probes(report.tau)
runs = expressed_runs(labels, data.series.category, allowed_categories={2}, min_length=3)

true_runs = expressed_runs(data.states, cats, allowed_categories={2}, min_length=3)
print(f"{len(runs)} candidate runs of >= 3 expressed probes ({len(true_runs)} in the hidden truth)")
for start, stop, group in runs[:8]:
    print(f"  probes {start}-{stop - 1}  group {group + 1}  length {stop - start}")
