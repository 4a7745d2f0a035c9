"""Shared ground truth for the demos: four well separated groups on three annotation categories."""

import numpy as np

from tilehmm.emission import ConstrainedGaussianSet
from tilehmm.hmm import GROUP_NAMES as GROUPS, ModelParams, ModelSpec  # noqa: F401

CATEGORIES = ("exon", "intron", "intergenic")

EMISSIONS = ConstrainedGaussianSet(
    mu=[[6.0, 6.0], [10.0, 10.0], [10.0, 7.5], [7.5, 10.0]],
    theta12=np.pi / 4, theta3=0.3, theta4=np.pi / 2 - 0.3,
    u1=np.full(4, 0.6), u2=0.1,
)

# exons mostly expressed, introns mostly silent, intergenic probes nearly always noise
TRANSITIONS = np.array([
    np.full((4, 4), 0.05) + np.eye(4) * 0.8,
    [[0.85, 0.05, 0.05, 0.05]] * 4,
    [[0.9, 0.04, 0.03, 0.03], [0.5, 0.3, 0.1, 0.1], [0.5, 0.1, 0.3, 0.1], [0.5, 0.1, 0.1, 0.3]],
])

TRUTH = ModelParams(ModelSpec(), EMISSIONS, TRANSITIONS)
LAYOUT = [(0, 40), (1, 25), (2, 35)]
