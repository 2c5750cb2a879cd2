"""MGMT methylation prediction from radiomic and latent shape features.

The pipeline reads co-registered NIFTI-1 volumes and tumor label masks,
extracts texture/shape/intensity features per (modality, region) pair,
binarizes every feature at its Fisher-optimal threshold, keeps the
significant ones and trains a leave-h-out ensemble of random forests.
"""

__version__ = "0.1.0"
