"""Frame labeling, window augmentation, k-fold splitting, and dataset files.

A raw frame is one recorded insertion procedure: 120 synchronized samples of
time, position, and force plus per-sample labels.  Augmentation prepends 60
neutral zero samples and cuts random 120-sample windows whose start lies in
the padded region; each window's single conclusive label is the per-sample
label at its final position.

On disk a dataset is a directory: `manifest.json` (frame and example
metadata, preprocessing provenance, normalization statistics), `frames.csv`
(frames as consecutive 120-row blocks), and `windows.csv` (examples as
consecutive 120-row blocks).  All CSV rows are `t,x,f,label`; floats use the
shortest decimal form that reloads to the identical 64-bit value, so
read(write(d)) is bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .filters import FilterSpec
from .labels import NUM_CLASSES, ClassLabel
from .mechanics import InsertionTrace, Scene, _trace_components

FRAME_LEN = 120
DEFAULT_PAD = 60
DEFAULT_WINDOWS_PER_FRAME = 40

CSV_HEADER = "t,x,f,label"


def label_trace(trace: InsertionTrace, scene: Scene) -> np.ndarray:
    """Recover per-sample class labels for a recorded trace of a known scene.

    Velocity is reconstructed from the position channel, then the same
    sample-by-sample walk used by the simulator replays contact, puncture,
    relaxation, and dwell to assign phases.
    """
    n = len(trace)
    if n == 0:
        raise ValueError("trace is empty; no labels derivable")
    velocity = np.empty(n)
    if n > 1:
        velocity[1:] = np.diff(trace.x) * trace.sample_rate
        velocity[0] = velocity[1]
    else:
        velocity[0] = 0.0
    _, labels, _ = _trace_components(trace.x, velocity, scene, trace.sample_rate)
    return labels


@dataclass
class RawFrame:
    """One insertion procedure: exactly 120 samples with labels and provenance."""

    frame_id: int
    t: np.ndarray
    x: np.ndarray
    f: np.ndarray
    labels: np.ndarray
    sample_rate: float
    tissue: ClassLabel | None = None
    seed: int | None = None
    scene: dict | None = None
    puncture_timestamps: np.ndarray | None = None

    def __post_init__(self):
        if not (len(self.t) == len(self.x) == len(self.f) == len(self.labels) == FRAME_LEN):
            raise ValueError(f"a raw frame must hold exactly {FRAME_LEN} samples")
        _check_labels(self.labels)


@dataclass
class PaddedFrame:
    """A raw frame with `pad` neutral zero samples prepended."""

    frame_id: int
    pad: int
    t: np.ndarray
    x: np.ndarray
    f: np.ndarray
    labels: np.ndarray
    sample_rate: float

    def __len__(self) -> int:
        return len(self.t)


@dataclass
class TrainingExample:
    """A fixed-length two-channel window plus its conclusive class label."""

    window: np.ndarray  # (length, 2): position, force
    label: int
    frame_id: int
    start: int


def _check_labels(labels):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= NUM_CLASSES):
        bad = labels[(labels < 0) | (labels >= NUM_CLASSES)][0]
        raise ValueError(f"label {bad} outside the 8-class encoding")


def zero_pad(frame: RawFrame, pad: int = DEFAULT_PAD) -> PaddedFrame:
    """Prepend `pad` zero-position, zero-force, neutral samples to a frame.

    Timestamps continue the uniform step backwards from the frame's first
    sample, imitating a cavity or functional pause before recording.
    """
    if pad < 0:
        raise ValueError("pad must be nonnegative")
    dt = 1.0 / frame.sample_rate
    t_pad = frame.t[0] - dt * np.arange(pad, 0, -1)
    return PaddedFrame(
        frame_id=frame.frame_id,
        pad=pad,
        t=np.concatenate([t_pad, frame.t]),
        x=np.concatenate([np.zeros(pad), frame.x]),
        f=np.concatenate([np.zeros(pad), frame.f]),
        labels=np.concatenate(
            [np.full(pad, int(ClassLabel.NEUTRAL), dtype=np.int64), frame.labels]
        ),
        sample_rate=frame.sample_rate,
    )


def random_windows(
    padded: PaddedFrame,
    count: int = DEFAULT_WINDOWS_PER_FRAME,
    length: int = FRAME_LEN,
    rng: np.random.Generator | None = None,
    seed: int | None = None,
) -> list[TrainingExample]:
    """Cut `count` random windows whose start index is uniform over [0, pad]."""
    if count < 1:
        raise ValueError("window count must be at least 1")
    if padded.pad < 1:
        raise ValueError("padded region is empty; nothing to randomize over")
    if len(padded) < length + 1:
        raise ValueError(f"padded frame too short: {len(padded)} < {length + 1}")
    if rng is None:
        rng = np.random.default_rng(seed)
    starts = rng.integers(0, padded.pad + 1, size=count)
    examples = []
    for start in starts:
        start = int(start)
        window = np.column_stack(
            [padded.x[start : start + length], padded.f[start : start + length]]
        )
        examples.append(
            TrainingExample(
                window=window,
                label=int(padded.labels[start + length - 1]),
                frame_id=padded.frame_id,
                start=start,
            )
        )
    return examples


@dataclass
class Normalization:
    """Per-channel z-score statistics, computed on training examples only."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, windows: np.ndarray) -> np.ndarray:
        return (windows - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": list(map(float, self.mean)), "std": list(map(float, self.std))}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalization":
        return cls(mean=np.asarray(d["mean"], float), std=np.asarray(d["std"], float))


@dataclass
class Dataset:
    """Frames plus their augmented windows, stored as dense arrays."""

    frames: list
    windows: np.ndarray  # (n, window_len, 2)
    labels: np.ndarray  # (n,)
    frame_ids: np.ndarray  # (n,)
    starts: np.ndarray  # (n,)
    pad: int
    window_len: int
    sample_rate: float
    augment_seed: int | None = None
    filter_spec: FilterSpec | None = None
    normalization: Normalization | None = None

    def __post_init__(self):
        n = len(self.labels)
        if not (len(self.windows) == len(self.frame_ids) == len(self.starts) == n):
            raise ValueError("example arrays must have equal length")
        _check_labels(self.labels)

    @property
    def n_examples(self) -> int:
        return len(self.labels)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=NUM_CLASSES)

    def example(self, i: int) -> TrainingExample:
        return TrainingExample(
            window=self.windows[i],
            label=int(self.labels[i]),
            frame_id=int(self.frame_ids[i]),
            start=int(self.starts[i]),
        )


def build_dataset(
    frames: list,
    windows_per_frame: int = DEFAULT_WINDOWS_PER_FRAME,
    pad: int = DEFAULT_PAD,
    window_len: int = FRAME_LEN,
    seed: int = 0,
    filter_spec: FilterSpec | None = None,
) -> Dataset:
    """Zero-pad every frame and cut seeded random windows; one call, one dataset."""
    if not frames:
        raise ValueError("no frames to augment")
    rng = np.random.default_rng(seed)
    windows = np.empty((len(frames) * windows_per_frame, window_len, 2))
    labels = np.empty(len(frames) * windows_per_frame, dtype=np.int64)
    frame_ids = np.empty_like(labels)
    starts = np.empty_like(labels)
    pos = 0
    for frame in frames:
        padded = zero_pad(frame, pad)
        for ex in random_windows(padded, windows_per_frame, window_len, rng=rng):
            windows[pos] = ex.window
            labels[pos] = ex.label
            frame_ids[pos] = ex.frame_id
            starts[pos] = ex.start
            pos += 1
    return Dataset(
        frames=list(frames),
        windows=windows,
        labels=labels,
        frame_ids=frame_ids,
        starts=starts,
        pad=pad,
        window_len=window_len,
        sample_rate=frames[0].sample_rate,
        augment_seed=seed,
        filter_spec=filter_spec,
    )


def compute_normalization(dataset: Dataset, example_indices) -> Normalization:
    """Per-channel mean/std over the given (training) examples."""
    selected = dataset.windows[np.asarray(example_indices)]
    flat = selected.reshape(-1, selected.shape[-1])
    std = flat.std(axis=0)
    if np.any(std == 0):
        raise ValueError("degenerate channel: zero variance in training examples")
    return Normalization(mean=flat.mean(axis=0), std=std)


@dataclass
class KFoldSplit:
    """Frame-level partition: a held-out evaluation set plus k training folds."""

    eval_frames: np.ndarray
    fold_frames: list
    eval_indices: np.ndarray
    fold_indices: list

    @property
    def k(self) -> int:
        return len(self.fold_frames)

    def train_indices(self, held_out_fold: int) -> np.ndarray:
        parts = [idx for j, idx in enumerate(self.fold_indices) if j != held_out_fold]
        return np.concatenate(parts)


def kfold_split(
    dataset: Dataset, k: int = 5, eval_fraction: float = 0.2, seed: int = 0
) -> KFoldSplit:
    """Split by source frame so no frame's windows cross a partition boundary."""
    if dataset.n_examples == 0:
        raise ValueError("dataset is empty")
    if k < 2:
        raise ValueError("k must be at least 2")
    frame_ids = np.array([f.frame_id for f in dataset.frames])
    rng = np.random.default_rng(seed)
    shuffled = rng.permutation(frame_ids)
    n_eval = int(round(eval_fraction * len(frame_ids)))
    eval_frames = np.sort(shuffled[:n_eval])
    rest = shuffled[n_eval:]
    if len(rest) < k:
        raise ValueError(f"only {len(rest)} source frames for {k} folds")
    fold_frames = [np.sort(part) for part in np.array_split(rest, k)]

    def indices_of(frames):
        return np.flatnonzero(np.isin(dataset.frame_ids, frames))

    return KFoldSplit(
        eval_frames=eval_frames,
        fold_frames=fold_frames,
        eval_indices=indices_of(eval_frames),
        fold_indices=[indices_of(f) for f in fold_frames],
    )


# File formats --------------------------------------------------------------

def _fmt(value: float) -> str:
    return repr(float(value))


def write_trace(path, trace: InsertionTrace) -> None:
    """Write a trace as CSV rows `t,x,f,label`."""
    with open(Path(path), "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for t, x, f, lab in zip(trace.t, trace.x, trace.f, trace.label):
            fh.write(f"{_fmt(t)},{_fmt(x)},{_fmt(f)},{int(lab)}\n")


def _parse_rows(path):
    rows = []
    with open(Path(path)) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"{path}:1: expected header {CSV_HEADER!r}, got {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 columns, got {len(parts)}")
            try:
                t, x, f = float(parts[0]), float(parts[1]), float(parts[2])
                lab = int(parts[3])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed record {line!r}") from None
            if not (0 <= lab < NUM_CLASSES):
                raise ValueError(f"{path}:{lineno}: label {lab} outside the 8-class encoding")
            if not (np.isfinite(t) and np.isfinite(x) and np.isfinite(f)):
                raise ValueError(f"{path}:{lineno}: non-finite value")
            rows.append((t, x, f, lab))
    return rows


def read_trace(path) -> InsertionTrace:
    """Read a `t,x,f,label` CSV back into a trace."""
    rows = _parse_rows(path)
    if not rows:
        raise ValueError(f"{path}: trace file holds no samples")
    t = np.array([r[0] for r in rows])
    if len(t) > 1:
        dt = np.diff(t)
        if np.any(dt <= 0):
            bad = int(np.flatnonzero(dt <= 0)[0]) + 3  # header + 1-based + offset
            raise ValueError(f"{path}:{bad}: timestamps must be strictly increasing")
        # snap away float residue so a 20 Hz trace reports exactly 20.0
        sample_rate = float(f"{1.0 / np.median(dt):.9g}")
    else:
        sample_rate = 0.0
    return InsertionTrace(
        t=t,
        x=np.array([r[1] for r in rows]),
        f=np.array([r[2] for r in rows]),
        label=np.array([r[3] for r in rows], dtype=np.int64),
        puncture_timestamps=np.empty(0),
        sample_rate=sample_rate,
    )


def write_dataset(path, dataset: Dataset) -> None:
    """Write a dataset directory: manifest.json, frames.csv, windows.csv."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)

    manifest = {
        "format": "needlesense-dataset-v1",
        "sample_rate": dataset.sample_rate,
        "window_len": dataset.window_len,
        "pad": dataset.pad,
        "augment_seed": dataset.augment_seed,
        "filter": None
        if dataset.filter_spec is None
        else {
            "order": dataset.filter_spec.order,
            "cutoff_hz": dataset.filter_spec.cutoff_hz,
            "sample_rate_hz": dataset.filter_spec.sample_rate_hz,
        },
        "normalization": None
        if dataset.normalization is None
        else dataset.normalization.to_dict(),
        "frames": [
            {
                "frame_id": fr.frame_id,
                "tissue": None if fr.tissue is None else fr.tissue.name.lower(),
                "seed": fr.seed,
                "scene": fr.scene,
                "puncture_timestamps": []
                if fr.puncture_timestamps is None
                else [float(v) for v in fr.puncture_timestamps],
            }
            for fr in dataset.frames
        ],
        "examples": [
            {"frame_id": int(fid), "start": int(start), "label": int(lab)}
            for fid, start, lab in zip(dataset.frame_ids, dataset.starts, dataset.labels)
        ],
    }
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)

    with open(root / "frames.csv", "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for fr in dataset.frames:
            for t, x, f, lab in zip(fr.t, fr.x, fr.f, fr.labels):
                fh.write(f"{_fmt(t)},{_fmt(x)},{_fmt(f)},{int(lab)}\n")

    padded = {fr.frame_id: zero_pad(fr, dataset.pad) for fr in dataset.frames}
    with open(root / "windows.csv", "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for fid, start in zip(dataset.frame_ids, dataset.starts):
            pf = padded[int(fid)]
            sl = slice(int(start), int(start) + dataset.window_len)
            for t, x, f, lab in zip(pf.t[sl], pf.x[sl], pf.f[sl], pf.labels[sl]):
                fh.write(f"{_fmt(t)},{_fmt(x)},{_fmt(f)},{int(lab)}\n")


def read_dataset(path) -> Dataset:
    """Read a dataset directory back, validating block sizes and label consistency."""
    root = Path(path)
    with open(root / "manifest.json") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "needlesense-dataset-v1":
        raise ValueError(f"{root}: unrecognized dataset format {manifest.get('format')!r}")

    sample_rate = float(manifest["sample_rate"])
    window_len = int(manifest["window_len"])
    pad = int(manifest["pad"])

    frame_rows = _parse_rows(root / "frames.csv")
    frame_meta = manifest["frames"]
    if len(frame_rows) != len(frame_meta) * FRAME_LEN:
        raise ValueError(
            f"{root}/frames.csv: {len(frame_rows)} rows do not form "
            f"{len(frame_meta)} frames of {FRAME_LEN} samples"
        )
    frames = []
    for i, meta in enumerate(frame_meta):
        block = frame_rows[i * FRAME_LEN : (i + 1) * FRAME_LEN]
        frames.append(
            RawFrame(
                frame_id=int(meta["frame_id"]),
                t=np.array([r[0] for r in block]),
                x=np.array([r[1] for r in block]),
                f=np.array([r[2] for r in block]),
                labels=np.array([r[3] for r in block], dtype=np.int64),
                sample_rate=sample_rate,
                tissue=None if meta.get("tissue") is None else ClassLabel[meta["tissue"].upper()],
                seed=meta.get("seed"),
                scene=meta.get("scene"),
                puncture_timestamps=np.asarray(meta.get("puncture_timestamps", []), float),
            )
        )

    examples = manifest["examples"]
    window_rows = _parse_rows(root / "windows.csv")
    if len(window_rows) != len(examples) * window_len:
        raise ValueError(
            f"{root}/windows.csv: {len(window_rows)} rows do not form "
            f"{len(examples)} windows of {window_len} samples"
        )
    padded = {fr.frame_id: zero_pad(fr, pad) for fr in frames}
    windows = np.empty((len(examples), window_len, 2))
    labels = np.empty(len(examples), dtype=np.int64)
    frame_ids = np.empty_like(labels)
    starts = np.empty_like(labels)
    for j, meta in enumerate(examples):
        block = window_rows[j * window_len : (j + 1) * window_len]
        fid, start, label = int(meta["frame_id"]), int(meta["start"]), int(meta["label"])
        if block[-1][3] != label:
            raise ValueError(
                f"{root}/windows.csv: window {j} ends with label {block[-1][3]}, "
                f"manifest says {label}"
            )
        pf = padded.get(fid)
        if pf is None:
            raise ValueError(f"{root}: window {j} references unknown frame {fid}")
        sl = slice(start, start + window_len)
        expect = np.column_stack([pf.x[sl], pf.f[sl]])
        got = np.array([[r[1], r[2]] for r in block])
        if expect.shape != got.shape or not np.array_equal(expect, got):
            raise ValueError(f"{root}/windows.csv: window {j} disagrees with its source frame")
        windows[j] = got
        labels[j] = label
        frame_ids[j] = fid
        starts[j] = start

    filt = manifest.get("filter")
    norm = manifest.get("normalization")
    return Dataset(
        frames=frames,
        windows=windows,
        labels=labels,
        frame_ids=frame_ids,
        starts=starts,
        pad=pad,
        window_len=window_len,
        sample_rate=sample_rate,
        augment_seed=manifest.get("augment_seed"),
        filter_spec=None if filt is None else FilterSpec(**filt),
        normalization=None if norm is None else Normalization.from_dict(norm),
    )
