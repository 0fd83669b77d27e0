"""Synthetic frame corpus: randomized single-tissue insertion procedures.

Each frame simulates one procedure: an air gap (cavity), a jittered tissue
layer, a constant 2 mm/s feed, and optionally a trailing dwell so traces end
in the neutral phase.  Per-frame randomization (gap length, feed duration,
+-10% parameter jitter, sensor noise seed) is what makes the classes
distributions rather than fixed curves; the heart/hock parameter overlap in
the default profile table is preserved under jitter, so those two classes
share a genuinely confusable region.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import FRAME_LEN, RawFrame
from .filters import FilterSpec, design_butterworth
from .labels import tissue_label
from .mechanics import (
    DEFAULT_PROFILES,
    Cavity,
    MotionProgram,
    Scene,
    jittered_profile,
    scene_to_dict,
    simulate_insertion,
)

DEFAULT_FILTER = FilterSpec(order=6, cutoff_hz=5.0, sample_rate_hz=20.0)


@dataclass(frozen=True)
class CorpusConfig:
    frames_per_tissue: int = 200
    seed: int = 0
    sample_rate: float = 20.0
    feed_speed: float = 2.0
    gap_range: tuple = (1.5, 4.5)
    feed_samples_range: tuple = (100, 120)  # inclusive; 120 means no dwell tail
    jitter: float = 0.10
    filter_spec: FilterSpec | None = DEFAULT_FILTER
    filter_position: bool = True
    tissues: tuple = ("liver", "kidney", "heart", "belly", "hock")


def frame_motion(feed_samples: int, sample_rate: float = 20.0, feed_speed: float = 2.0):
    """Feed for `feed_samples` samples, then dwell until the frame is full."""
    feed = feed_samples / sample_rate
    dwell_samples = FRAME_LEN - feed_samples
    if dwell_samples <= 0:
        return MotionProgram(((feed_speed, feed),), sample_rate)
    return MotionProgram(
        ((feed_speed, feed), (0.0, dwell_samples / sample_rate)), sample_rate
    )


def nominal_scene(tissue: str, gap: float = 3.5) -> Scene:
    """Unjittered single-tissue scene behind an air gap; handy for replays and demos."""
    return Scene((Cavity(gap), DEFAULT_PROFILES[tissue_label(tissue).name.lower()]))


def _filtered(samples: np.ndarray, spec: FilterSpec) -> np.ndarray:
    return design_butterworth(spec).apply(samples)


def synthesize_frames(config: CorpusConfig) -> list[RawFrame]:
    """Simulate, filter, and label one corpus of single-tissue frames.

    Deterministic for a given config: each frame draws from its own child of
    the master seed, so frame k is reproducible independent of the others.
    """
    total = config.frames_per_tissue * len(config.tissues)
    children = np.random.SeedSequence(config.seed).spawn(total)
    frames: list[RawFrame] = []
    frame_id = 0
    for tissue in config.tissues:
        base = DEFAULT_PROFILES[tissue_label(tissue).name.lower()]
        for _ in range(config.frames_per_tissue):
            rng = np.random.default_rng(children[frame_id])
            gap = float(rng.uniform(*config.gap_range))
            lo, hi = config.feed_samples_range
            feed_samples = int(rng.integers(lo, hi + 1))
            profile = jittered_profile(base, rng, config.jitter)
            scene = Scene((Cavity(gap), profile))
            motion = frame_motion(feed_samples, config.sample_rate, config.feed_speed)
            sim_seed = int(rng.integers(0, 2**63 - 1))
            trace = simulate_insertion(scene, motion, sim_seed)

            f = trace.f
            x = trace.x
            if config.filter_spec is not None:
                f = _filtered(f, config.filter_spec)
                if config.filter_position:
                    x = _filtered(x, config.filter_spec)
            frames.append(
                RawFrame(
                    frame_id=frame_id,
                    t=trace.t,
                    x=x,
                    f=f,
                    labels=trace.label,
                    sample_rate=config.sample_rate,
                    tissue=profile.tissue_type,
                    seed=sim_seed,
                    scene=scene_to_dict(scene),
                    puncture_timestamps=trace.puncture_timestamps,
                )
            )
            frame_id += 1
    return frames
