"""Range-image LiDAR segmentation and semi-supervised classifier training.

The package covers the full loop: synthetic scene generation, spherical
range-image projection, region-growing segmentation, sample rasterization,
inter-frame tracking, pairwise constraint mining, a small from-scratch
CNN classifier, training with labeled and constraint losses, evaluation,
and an annotation review service.
"""

__version__ = "0.1.0"

CLASS_NAMES = ("person", "car", "cyclist", "trunk", "bush", "building", "unknown")
NUM_CLASSES = len(CLASS_NAMES)
UNKNOWN_LABEL = NUM_CLASSES  # labels are 1-based; 7 is the catch-all class


def class_label(name: str) -> int:
    """1-based label for a class name."""
    return CLASS_NAMES.index(name) + 1


def class_name(label: int) -> str:
    if not 1 <= label <= NUM_CLASSES:
        raise ValueError(f"label must be in 1..{NUM_CLASSES}, got {label}")
    return CLASS_NAMES[label - 1]
