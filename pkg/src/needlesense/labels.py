"""Class labels shared by the simulator, dataset pipeline, and classifier."""

from __future__ import annotations

from enum import IntEnum


class ClassLabel(IntEnum):
    """Per-sample class with a fixed integer encoding, stable across files and runs."""

    NEUTRAL = 0
    PRE_PUNCTURE = 1
    PUNCTURE = 2
    LIVER = 3
    KIDNEY = 4
    HEART = 5
    BELLY = 6
    HOCK = 7


NUM_CLASSES = 8

TISSUE_LABELS = (
    ClassLabel.LIVER,
    ClassLabel.KIDNEY,
    ClassLabel.HEART,
    ClassLabel.BELLY,
    ClassLabel.HOCK,
)

TISSUE_BY_NAME = {label.name.lower(): label for label in TISSUE_LABELS}


def tissue_label(name: str) -> ClassLabel:
    """Look up a tissue label by its lowercase name ('liver', 'kidney', ...)."""
    try:
        return TISSUE_BY_NAME[name.lower()]
    except KeyError:
        raise ValueError(
            f"unknown tissue {name!r}; expected one of {sorted(TISSUE_BY_NAME)}"
        ) from None
