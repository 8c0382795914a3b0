"""Scene-coordinate-regression localization on synthetic scenes.

A single small MLP head regresses per-observation 3D scene coordinates from
concatenated local and global encodings, trained with a robust reprojection
loss only (no 3D supervision). Camera poses are recovered with P3P + RANSAC.
The package also ships the synthetic-scene simulator, co-visibility analysis
tools, a 2D toy task for the position decoder, and a CLI wiring everything
into reproducible experiments.
"""

__version__ = "0.1.0"
