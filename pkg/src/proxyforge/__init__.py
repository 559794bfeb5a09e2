"""Proxy-label generation for domain-adaptive segmentation, desk scale.

Subpackages cover the full toy pipeline: dense tensors and semantic map
types, quantile/threshold machinery, the proxy generation algorithm,
segmentation metrics, a minimal reverse-mode autodiff, the adversarial
trainer, a synthetic domain-shift dataset generator, and the CLI.
"""

__version__ = "0.1.0"

IGNORE_LABEL = 255
