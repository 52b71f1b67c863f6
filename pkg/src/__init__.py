"""HyCoRe: hyperbolic part-whole regularization for point-cloud classifiers"""

__version__ = "1.0.0"
