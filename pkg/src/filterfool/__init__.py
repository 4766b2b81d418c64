"""Adversarial image filters that fool classifiers at the semantic-class level.

A per-image fully convolutional network learns a perturbation that mimics a
chosen enhancement filter (gamma, log, linear or nonlinear detail
enhancement) while moving the prediction out of the original semantic class.
Norm-bounded baselines, input-transformation defenses and the evaluation
metrics live alongside it.
"""

__version__ = "0.1.0"
