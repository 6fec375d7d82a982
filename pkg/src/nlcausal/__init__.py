"""Causal effect estimation on spatial grids under non-local confounding.

Subpackages and modules:

- ``engine``: float64 tensors with reverse-mode autodiff, layers, Adam.
- ``unet``: the representation network and checkpoint format.
- ``simgen``: synthetic datasets with non-local treatment assignment.
- ``representation``: supervised and self-supervised training objectives.
- ``causal``: IPTW, matching, propensity models, CAR baselines.
- ``benchmark``: the multi-method, multi-seed comparison harness.
- ``detrend``: Gibbs-sampled fixed-effects detrending regression.
- ``gridio``: binary grid files, site CSVs, and strict run configs.
- ``cli``: batch entry points over all of the above.
"""

__version__ = "0.1.0"
