"""Independent reference implementations used only by the tests.

Nothing here imports the package under test: rotations are rebuilt from
quaternions by hand, the exponential map is a plain matrix exponential,
derivatives come from complex-step or finite differences, and alignment
uses Horn's quaternion method instead of an SVD.
"""
