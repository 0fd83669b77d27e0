"""Three-phase needle-tissue force model and the insertion simulator.

Per-sample needle force is the sum of a stiffness term (second-order polynomial
in deformation, released linearly after rupture), a Karnopp-style friction term
scaled by inserted shaft depth, and a constant cutting term while advancing
through punctured tissue.  Scenes stack tissue layers and cavities along the
insertion axis; each layer is punctured independently.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .labels import ClassLabel, tissue_label


@dataclass(frozen=True)
class TissueProfile:
    """Mechanical parameters of one tissue layer.

    Units: forces N, lengths mm, speeds mm/s.  `a1`/`a2` are the linear and
    quadratic stiffness coefficients, `puncture_depth` the deformation at
    rupture, `cutting_force` the constant post-puncture cutting term,
    `friction_coulomb`/`friction_viscous` the per-depth Karnopp coefficients,
    and `static_band` the zero-velocity half-width inside which friction
    vanishes.
    """

    tissue_type: ClassLabel
    a1: float
    a2: float
    puncture_depth: float
    cutting_force: float
    friction_coulomb: float
    friction_viscous: float
    static_band: float = 0.1
    noise_std: float = 0.01
    thickness: float = 30.0
    puncture_relax_samples: int = 5

    def __post_init__(self):
        if self.tissue_type not in (
            ClassLabel.LIVER,
            ClassLabel.KIDNEY,
            ClassLabel.HEART,
            ClassLabel.BELLY,
            ClassLabel.HOCK,
        ):
            raise ValueError(f"tissue_type must be a tissue label, got {self.tissue_type!r}")
        if self.a1 < 0 or self.a2 < 0:
            raise ValueError("stiffness coefficients must be nonnegative")
        if self.a1 == 0 and self.a2 == 0:
            raise ValueError("at least one stiffness coefficient must be positive")
        if self.puncture_depth <= 0:
            raise ValueError("puncture_depth must be positive")
        if self.cutting_force < 0:
            raise ValueError("cutting_force must be nonnegative")
        if self.friction_coulomb < 0 or self.friction_viscous < 0:
            raise ValueError("friction coefficients must be nonnegative")
        if self.static_band <= 0:
            raise ValueError("static_band must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if self.thickness <= self.puncture_depth:
            raise ValueError("thickness must exceed puncture_depth")
        if self.puncture_relax_samples < 1:
            raise ValueError("puncture_relax_samples must be at least 1")

    @property
    def rupture_stiffness(self) -> float:
        """Stiffness force at the rupture deformation (the value released by puncture)."""
        return self.a1 * self.puncture_depth + self.a2 * self.puncture_depth**2


@dataclass(frozen=True)
class Cavity:
    """Force-free gap along the insertion axis (air, fluid pocket, pause region)."""

    length: float

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("cavity length must be positive")


@dataclass(frozen=True)
class Scene:
    """Ordered stack of tissue layers and cavities along the insertion axis."""

    layers: tuple

    def __post_init__(self):
        if not self.layers:
            raise ValueError("scene needs at least one layer")
        for layer in self.layers:
            if not isinstance(layer, (TissueProfile, Cavity)):
                raise TypeError(f"layer must be TissueProfile or Cavity, got {type(layer)!r}")

    def layer_starts(self) -> np.ndarray:
        """Axial position of each layer's upstream surface, in scene order."""
        lengths = [
            layer.thickness if isinstance(layer, TissueProfile) else layer.length
            for layer in self.layers
        ]
        return np.concatenate([[0.0], np.cumsum(lengths)[:-1]])

    def tissue_layers(self):
        """(index, surface position, profile) for each tissue layer in order."""
        starts = self.layer_starts()
        return [
            (i, starts[i], layer)
            for i, layer in enumerate(self.layers)
            if isinstance(layer, TissueProfile)
        ]

    @property
    def max_noise_std(self) -> float:
        stds = [l.noise_std for l in self.layers if isinstance(l, TissueProfile)]
        return max(stds) if stds else 0.0


@dataclass(frozen=True)
class MotionProgram:
    """Piecewise-constant velocity program sampled at a fixed rate.

    Velocities may be zero (dwell) or negative (retraction); durations are in
    seconds and must be positive.
    """

    segments: tuple
    sample_rate: float = 20.0

    def __post_init__(self):
        if not self.segments:
            raise ValueError("motion program needs at least one segment")
        for velocity, duration in self.segments:
            if duration <= 0:
                raise ValueError("segment durations must be positive")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.num_samples < 1:
            raise ValueError("motion program too short to produce a sample")

    @property
    def num_samples(self) -> int:
        return sum(int(round(d * self.sample_rate)) for _, d in self.segments)

    def velocity_per_sample(self) -> np.ndarray:
        parts = [
            np.full(int(round(d * self.sample_rate)), float(v)) for v, d in self.segments
        ]
        return np.concatenate([p for p in parts if p.size] or [np.empty(0)])


@dataclass
class InsertionTrace:
    """Synchronized time/position/force arrays with per-sample class labels."""

    t: np.ndarray
    x: np.ndarray
    f: np.ndarray
    label: np.ndarray
    puncture_timestamps: np.ndarray
    sample_rate: float

    def __post_init__(self):
        n = len(self.t)
        if not (len(self.x) == len(self.f) == len(self.label) == n):
            raise ValueError("trace arrays must have equal length")

    def __len__(self) -> int:
        return len(self.t)


@dataclass
class ForceComponents:
    """Noise-free per-sample decomposition of the simulated force."""

    stiffness: np.ndarray
    friction: np.ndarray
    cutting: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.stiffness + self.friction + self.cutting


def stiffness_force(
    depth_into_layer: float,
    profile: TissueProfile,
    punctured: bool = False,
    samples_since_puncture: int = 0,
) -> float:
    """Stiffness component for one layer at the given deformation depth (mm).

    Before rupture this is the polynomial a1*d + a2*d^2.  After rupture the
    value held at the rupture instant decays linearly to zero over
    `puncture_relax_samples`.
    """
    if depth_into_layer < 0:
        raise ValueError(f"depth into layer must be nonnegative, got {depth_into_layer}")
    if not punctured:
        return profile.a1 * depth_into_layer + profile.a2 * depth_into_layer**2
    scale = max(0.0, 1.0 - samples_since_puncture / profile.puncture_relax_samples)
    return profile.rupture_stiffness * scale


def friction_force(inserted_depth: float, velocity: float, profile: TissueProfile) -> float:
    """Karnopp friction scaled by the shaft length inside the layer.

    Inside the static band (|v| <= static_band) no friction is produced: the
    simulator tracks no applied axial force, so stiction has nothing to
    balance and dwell samples carry zero force.
    """
    if inserted_depth < 0:
        raise ValueError(f"inserted depth must be nonnegative, got {inserted_depth}")
    if abs(velocity) <= profile.static_band:
        return 0.0
    return inserted_depth * (
        profile.friction_coulomb * math.copysign(1.0, velocity)
        + profile.friction_viscous * velocity
    )


def cutting_force(profile: TissueProfile, punctured: bool, velocity: float) -> float:
    """Constant cutting component: active only after rupture while advancing."""
    if punctured and velocity > 0:
        return profile.cutting_force
    return 0.0


def _trace_components(x, velocity, scene, sample_rate):
    """Walk a position trajectory through a scene sample by sample.

    Returns (ForceComponents, labels, puncture sample indices).  The same walk
    backs both the simulator and label recovery from recorded traces, so the
    two can never disagree.
    """
    n = len(x)
    tissue = scene.tissue_layers()
    punctured_at: dict[int, int] = {}
    stiff = np.zeros(n)
    fric = np.zeros(n)
    cut = np.zeros(n)
    labels = np.zeros(n, dtype=np.int64)
    puncture_samples: list[int] = []

    for k in range(n):
        xk = float(x[k])
        vk = float(velocity[k])

        # Rupture check: the frontmost unpunctured layer gives way once the
        # deformation into it reaches its puncture depth.
        for i, start, prof in tissue:
            if i in punctured_at:
                continue
            if xk - start >= prof.puncture_depth:
                punctured_at[i] = k
                puncture_samples.append(k)
                continue
            break

        f_s = 0.0
        f_f = 0.0
        f_c = 0.0
        phase = ClassLabel.NEUTRAL
        in_relax = False
        for i, start, prof in tissue:
            end = start + prof.thickness
            k0 = punctured_at.get(i)
            if k0 is None:
                d = xk - start
                if d > 0:
                    f_s += stiffness_force(d, prof, punctured=False)
                    phase = ClassLabel.PRE_PUNCTURE
            else:
                since = k - k0
                f_s += stiffness_force(max(xk - start, 0.0), prof, True, since)
                depth = min(max(xk - start, 0.0), prof.thickness)
                f_f += friction_force(depth, vk, prof)
                if start <= xk < end:
                    f_c += cutting_force(prof, True, vk)
                if since <= prof.puncture_relax_samples:
                    in_relax = True
                # the tissue label claims its far boundary too, so a sample
                # landing exactly on it cannot fall back to neutral
                elif start <= xk <= end and phase == ClassLabel.NEUTRAL:
                    phase = prof.tissue_type

        if in_relax:
            phase = ClassLabel.PUNCTURE
        total = f_s + f_f + f_c
        if vk == 0.0 and abs(total) < 1e-12:
            phase = ClassLabel.NEUTRAL

        stiff[k] = f_s
        fric[k] = f_f
        cut[k] = f_c
        labels[k] = int(phase)

    return ForceComponents(stiff, fric, cut), labels, puncture_samples


def simulate_insertion(
    scene: Scene,
    motion: MotionProgram,
    seed: int,
    return_components: bool = False,
):
    """Simulate one insertion procedure and return its trace.

    Position advances by v/sample_rate per sample (clamped at 0), forces are
    accumulated layer by layer, and seeded Gaussian noise is added to the
    force channel.  Identical (scene, motion, seed) always reproduce the same
    trace.
    """
    n = motion.num_samples
    fs = motion.sample_rate
    velocity = motion.velocity_per_sample()

    x = np.empty(n)
    x[0] = 0.0
    step = velocity / fs
    for k in range(1, n):
        x[k] = max(x[k - 1] + step[k], 0.0)
    t = np.arange(n) / fs

    components, labels, puncture_samples = _trace_components(x, velocity, scene, fs)

    rng = np.random.default_rng(seed)
    noise_std = scene.max_noise_std
    f = components.total.copy()
    if noise_std > 0:
        f += rng.normal(0.0, noise_std, size=n)

    trace = InsertionTrace(
        t=t,
        x=x,
        f=f,
        label=labels,
        puncture_timestamps=t[puncture_samples] if puncture_samples else np.empty(0),
        sample_rate=fs,
    )
    if return_components:
        return trace, components
    return trace


# Default per-tissue parameters.  These are artifact configuration, not
# measured ground truth: cutting force and Coulomb friction are separated by
# >=25% between every tissue pair except heart/hock, which are deliberately
# close so the two classes share a confusable force signature.  The longer
# relaxation window (8 samples = 0.4 s at 20 Hz) keeps the rupture transient
# inside the puncture label span after causal low-pass filtering delays it.
DEFAULT_PROFILES: dict[str, TissueProfile] = {
    "liver": TissueProfile(
        tissue_type=ClassLabel.LIVER,
        a1=0.12, a2=0.0080, puncture_depth=4.5,
        cutting_force=0.30, friction_coulomb=0.012, friction_viscous=0.0020,
        puncture_relax_samples=8,
    ),
    "kidney": TissueProfile(
        tissue_type=ClassLabel.KIDNEY,
        a1=0.21, a2=0.0140, puncture_depth=3.5,
        cutting_force=0.52, friction_coulomb=0.024, friction_viscous=0.0035,
        puncture_relax_samples=8,
    ),
    "heart": TissueProfile(
        tissue_type=ClassLabel.HEART,
        a1=0.32, a2=0.0220, puncture_depth=2.8,
        cutting_force=0.78, friction_coulomb=0.040, friction_viscous=0.0060,
        puncture_relax_samples=8,
    ),
    "belly": TissueProfile(
        tissue_type=ClassLabel.BELLY,
        a1=0.064, a2=0.0042, puncture_depth=5.2,
        cutting_force=0.18, friction_coulomb=0.062, friction_viscous=0.0012,
        puncture_relax_samples=8,
    ),
    "hock": TissueProfile(
        tissue_type=ClassLabel.HOCK,
        a1=0.37, a2=0.0260, puncture_depth=2.4,
        cutting_force=0.92, friction_coulomb=0.047, friction_viscous=0.0070,
        puncture_relax_samples=8,
    ),
}

_JITTERED_FIELDS = (
    "a1", "a2", "puncture_depth", "cutting_force",
    "friction_coulomb", "friction_viscous",
)


def jittered_profile(profile: TissueProfile, rng: np.random.Generator, amount: float = 0.10):
    """Scale each mechanical parameter by an independent uniform factor in [1-amount, 1+amount]."""
    changes = {
        name: getattr(profile, name) * rng.uniform(1.0 - amount, 1.0 + amount)
        for name in _JITTERED_FIELDS
    }
    return replace(profile, **changes)


# JSON configuration -------------------------------------------------------

def profile_to_dict(profile: TissueProfile) -> dict:
    d = {f.name: getattr(profile, f.name) for f in fields(profile)}
    d["tissue_type"] = profile.tissue_type.name.lower()
    return d


def profile_from_dict(d: dict) -> TissueProfile:
    if "tissue" in d and "tissue_type" not in d:
        d = dict(d)
        d["tissue_type"] = d.pop("tissue")
    base = None
    name = d.get("tissue_type")
    if isinstance(name, str):
        base = DEFAULT_PROFILES.get(name.lower())
    if base is not None:
        overrides = {k: v for k, v in d.items() if k != "tissue_type"}
        allowed = {f.name for f in fields(TissueProfile)}
        unknown = set(overrides) - allowed
        if unknown:
            raise ValueError(f"unknown tissue profile fields: {sorted(unknown)}")
        return replace(base, **overrides)
    d = dict(d)
    d["tissue_type"] = tissue_label(str(name))
    return TissueProfile(**d)


def scene_to_dict(scene: Scene) -> dict:
    layers = []
    for layer in scene.layers:
        if isinstance(layer, Cavity):
            layers.append({"kind": "cavity", "length": layer.length})
        else:
            layers.append({"kind": "tissue", **profile_to_dict(layer)})
    return {"layers": layers}


def scene_from_dict(d: dict) -> Scene:
    layers = []
    for entry in d.get("layers", []):
        kind = entry.get("kind", "tissue")
        if kind == "cavity":
            layers.append(Cavity(length=float(entry["length"])))
        elif kind == "tissue":
            layers.append(profile_from_dict({k: v for k, v in entry.items() if k != "kind"}))
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    return Scene(layers=tuple(layers))


def motion_to_dict(motion: MotionProgram) -> dict:
    return {
        "segments": [{"velocity": v, "duration": d} for v, d in motion.segments],
        "sample_rate": motion.sample_rate,
    }


def motion_from_dict(d: dict) -> MotionProgram:
    segments = tuple(
        (float(s["velocity"]), float(s["duration"])) for s in d["segments"]
    )
    return MotionProgram(segments=segments, sample_rate=float(d.get("sample_rate", 20.0)))


def load_scene_file(path):
    """Read a scene JSON file; returns (Scene, MotionProgram or None)."""
    with open(Path(path)) as fh:
        d = json.load(fh)
    scene = scene_from_dict(d)
    motion = motion_from_dict(d["motion"]) if "motion" in d else None
    return scene, motion
