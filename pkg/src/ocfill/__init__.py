"""Gap-free reconstruction of gappy gridded ocean-colour fields.

Submodules:
  grid      data model, standardization, sliding windows, GFF container I/O
  masking   observation sub-sampling strategies (pixels, patches, sensors)
  dineof    EOF matrix-completion baselines
  autodiff  float64 tensors with a reverse-mode tape (kernels in .kernels)
  models    CNN/UNet direct inversion, learned prior, ConvLSTM solver cell
  varnet    variational cost, iterative solver, observation-only training
  metrics   RMSLE / MRE evaluation and CSV reports
  synth     synthetic truth fields, cloud masks, multi-sensor swaths
  cli       the `ocfill` command-line entry point
"""

__version__ = "0.1.0"
