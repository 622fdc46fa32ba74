"""Desk-scale laboratory for two-layer quasi-geostrophic subgrid closures.

Pipeline: simulate high/low-resolution flows (:mod:`qgc.qgmodel`), extract
ground-truth subgrid forcing and datasets (:mod:`qgc.subgrid`), train
Fourier-operator and convolutional closures (:mod:`qgc.models`,
:mod:`qgc.training`), and evaluate them offline, online, and by wall time
(:mod:`qgc.evaluation`).  The ``qgc`` command line (:mod:`qgc.cli`) drives
the whole pipeline from text config files.
"""

__version__ = "0.1.0"
