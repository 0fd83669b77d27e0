"""Acceptance suite: every criterion checked at its stated tolerance.

Each test prints exactly one `[criterion N] PASS/FAIL: ...` line.  The
end-to-end experiment (criterion 2) trains five fold models on the full
synthetic corpus and is by far the slowest part of the whole test suite;
its budget is sized for a commodity multi-core CPU.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from needlesense.corpus import CorpusConfig, DEFAULT_FILTER, frame_motion, synthesize_frames
from needlesense.dataset import (
    FRAME_LEN,
    RawFrame,
    build_dataset,
    compute_normalization,
    kfold_split,
    read_dataset,
    write_dataset,
    zero_pad,
)
from needlesense.evaluation import cross_validate, mean_std, score
from needlesense.filters import FilterSpec, design_butterworth
from needlesense.labels import TISSUE_LABELS, ClassLabel
from needlesense.mechanics import DEFAULT_PROFILES, Cavity, Scene, simulate_insertion
from needlesense.model import (
    ModelConfig,
    forward,
    init_parameters,
    loss_and_gradients,
)
from needlesense.streaming import StreamState, offline_predictions, replay
from needlesense.training import TrainConfig, load_checkpoint, save_checkpoint, train

END_TO_END_EPOCHS = 1
LATENCY_BUDGET_MS = 10.0
SAMPLE_PERIOD_MS = 50.0


def _verdict(criterion, ok: bool, detail: str):
    print(f"\n[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


@pytest.fixture(scope="module")
def end_to_end():
    """Full synthetic experiment: 200 frames/tissue, 40 windows/frame, 5-fold CV."""
    t0 = time.perf_counter()
    frames = synthesize_frames(CorpusConfig(frames_per_tissue=200, seed=11))
    dataset = build_dataset(frames, windows_per_frame=40, seed=12, filter_spec=DEFAULT_FILTER)
    split = kfold_split(dataset, k=5, eval_fraction=0.2, seed=13)
    report = cross_validate(
        dataset,
        split,
        ModelConfig(d_model=64, num_heads=8, num_blocks=4, ffn_dim=128),
        TrainConfig(epochs=END_TO_END_EPOCHS, batch_size=64, seed=0, dtype="float32"),
        progress=lambda msg: print(msg, flush=True),
    )
    fold0 = report.models[0]
    return {
        "dataset": dataset,
        "split": split,
        "report": report,
        "params": fold0.result.params,
        "normalization": fold0.normalization,
        "filter_spec": DEFAULT_FILTER,
        "elapsed_s": time.perf_counter() - t0,
    }


def clean_trace(tissue: str, seed: int = 0, gap: float = 3.0):
    profile = replace(DEFAULT_PROFILES[tissue], noise_std=0.0)
    return simulate_insertion(Scene((Cavity(gap), profile)), frame_motion(110), seed)


def test_criterion_1_paper_results_caveat():
    # Table-reported accuracies were measured on porcine tissue that is not
    # available here; they are retained as a reference row only and are not
    # reproduced by the synthetic suite.
    from needlesense.evaluation import REFERENCE_ACCURACY

    ok = REFERENCE_ACCURACY == {"a_pre": 0.9510, "a_punc": 0.9458, "a_tissue": 0.9120}
    _verdict(1, ok, "reference accuracies recorded for comparison only (not reproducible)")


def test_criterion_2_end_to_end_classification(end_to_end):
    report = end_to_end["report"]
    problems = []

    # default profile table: >=25% pairwise separation in (cutting force,
    # Coulomb friction) for every tissue pair except the deliberately
    # overlapping heart/hock pair
    names = list(DEFAULT_PROFILES)
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            pa, pb = DEFAULT_PROFILES[a], DEFAULT_PROFILES[b]
            seps = [
                abs(getattr(pa, field) - getattr(pb, field))
                / min(getattr(pa, field), getattr(pb, field))
                for field in ("cutting_force", "friction_coulomb")
            ]
            if {a, b} == {"heart", "hock"}:
                if min(seps) >= 0.25:
                    problems.append("heart/hock pair is not overlapping")
            elif min(seps) < 0.25:
                problems.append(f"profiles {a}/{b} separated by only {min(seps):.0%}")

    means = {}
    for metric, floor in (("a_pre", 0.95), ("a_punc", 0.85), ("a_tissue", 0.90)):
        mean, _ = mean_std(report.fold_eval, metric)
        means[metric] = mean
        if mean < floor:
            problems.append(f"{metric}={mean:.4f} < {floor}")

    confusion = report.confusion_eval_total
    h, c = int(ClassLabel.HEART), int(ClassLabel.HOCK)
    hh = int(confusion[h, c] + confusion[c, h])
    tissues = [int(l) for l in TISSUE_LABELS]
    other_pairs = {
        (i, j): int(confusion[i, j] + confusion[j, i])
        for i in tissues
        for j in tissues
        if i < j and (i, j) != (h, c)
    }
    worst_other = max(other_pairs.values())
    if hh <= worst_other:
        problems.append(f"heart/hock confusion {hh} does not exceed worst other pair {worst_other}")

    detail = (
        f"a_pre={means['a_pre']:.4f} a_punc={means['a_punc']:.4f} "
        f"a_tissue={means['a_tissue']:.4f}; heart/hock confusion {hh} vs "
        f"worst other pair {worst_other}; elapsed {end_to_end['elapsed_s']:.0f}s"
    )
    _verdict(2, not problems, detail if not problems else "; ".join(problems))


def test_criterion_3_augmentation_exactness():
    rng = np.random.default_rng(0)
    frames = []
    for i in range(2000):
        labels = np.zeros(FRAME_LEN, dtype=np.int64)
        labels[40:] = int(TISSUE_LABELS[i % 5])
        frames.append(
            RawFrame(
                frame_id=i,
                t=np.arange(FRAME_LEN) / 20.0,
                x=rng.normal(size=FRAME_LEN),
                f=rng.normal(size=FRAME_LEN),
                labels=labels,
                sample_rate=20.0,
            )
        )
    dataset = build_dataset(frames, windows_per_frame=40, pad=60, seed=5)
    again = build_dataset(frames, windows_per_frame=40, pad=60, seed=5)

    problems = []
    if dataset.n_examples != 80_000:
        problems.append(f"{dataset.n_examples} examples != 80000")
    if dataset.windows.shape[1:] != (120, 2):
        problems.append(f"window shape {dataset.windows.shape[1:]}")
    if dataset.starts.max() > 60 or dataset.starts.min() < 0:
        problems.append("window start outside [0, 60]")
    padded = {fr.frame_id: zero_pad(fr, 60) for fr in frames}
    ends = np.array(
        [padded[int(fid)].labels[int(s) + 119] for fid, s in zip(dataset.frame_ids, dataset.starts)]
    )
    if not np.array_equal(ends, dataset.labels):
        problems.append("conclusive label mismatch with window end")
    if not (np.array_equal(dataset.starts, again.starts) and np.array_equal(dataset.labels, again.labels)):
        problems.append("not deterministic under seed")
    _verdict(3, not problems, "2000 frames -> 80000 windows of 120, starts <= 60, deterministic"
             if not problems else "; ".join(problems))


def test_criterion_4_gradient_check():
    t0 = time.perf_counter()
    config = ModelConfig(seq_len=8, in_features=2, d_model=8, num_heads=2, num_blocks=1, ffn_dim=16)
    params = init_parameters(config, seed=3)
    rng = np.random.default_rng(7)
    X = rng.normal(size=(4, 8, 2))
    y = rng.integers(0, 8, size=4)
    _, grads = loss_and_gradients(params, X, y)

    h = 1e-5
    checked = 0
    worst = 0.0
    problems = []
    for name in params.trainable_names():
        flat = params.tensors[name].reshape(-1)
        count = min(6, flat.size)
        for j in rng.choice(flat.size, size=count, replace=False):
            orig = flat[j]
            flat[j] = orig + h
            up, _ = loss_and_gradients(params, X, y)
            flat[j] = orig - h
            down, _ = loss_and_gradients(params, X, y)
            flat[j] = orig
            fd = (up - down) / (2 * h)
            an = grads[name].reshape(-1)[j]
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
            worst = max(worst, rel)
            if rel >= 1e-4:
                problems.append(f"{name}[{j}] rel err {rel:.2e}")
            checked += 1
    elapsed = time.perf_counter() - t0
    if checked < 100:
        problems.append(f"only {checked} coordinates checked")
    if elapsed > 60:
        problems.append(f"took {elapsed:.1f}s > 60s")
    _verdict(4, not problems,
             f"{checked} coordinates, worst rel err {worst:.2e}, {elapsed:.1f}s"
             if not problems else "; ".join(problems))


def test_criterion_5_filter_correctness():
    spec = FilterSpec(order=6, cutoff_hz=5.0, sample_rate_hz=20.0)
    cascade = design_butterworth(spec)
    problems = []

    dc = abs(abs(cascade.frequency_response([0.0])[0]) - 1.0)
    if dc >= 1e-9:
        problems.append(f"|H(0)|-1 = {dc:.2e}")
    hc = abs(cascade.frequency_response([5.0])[0])
    cut = abs(hc * hc - 0.5)
    if cut >= 1e-6:
        problems.append(f"||H(fc)|^2-0.5| = {cut:.2e}")
    grid = np.geomspace(spec.cutoff_hz / 8, 0.99 * spec.sample_rate_hz / 2, 512)
    mags = cascade.magnitude_response(grid)
    if not np.all(np.diff(mags) < 0):
        problems.append("magnitude not strictly decreasing on the 512-point grid")
    margin = 1.0 - np.abs(cascade.poles()).max()
    if margin < 1e-9:
        problems.append(f"pole margin {margin:.2e} < 1e-9")
    rng = np.random.default_rng(3)
    signal = rng.normal(size=2000)
    batch = design_butterworth(spec).apply(signal)
    stream = design_butterworth(spec)
    folded = np.array([stream.step(s) for s in signal])
    if not np.array_equal(batch, folded):
        problems.append("batch apply != streaming step fold")

    _verdict(5, not problems,
             f"DC err {dc:.1e}, cutoff err {cut:.1e}, monotone, pole margin {margin:.2e}, "
             "batch == stream bit-exact" if not problems else "; ".join(problems))


def test_criterion_6_architecture_invariants(end_to_end):
    problems = []
    config = ModelConfig()
    params = init_parameters(config, seed=9)
    rng = np.random.default_rng(4)
    X = rng.normal(size=(4, config.seq_len, config.in_features))
    probs, attention = forward(params, X, return_attention=True)
    for i, P in enumerate(attention):
        err = np.abs(P.sum(axis=-1) - 1.0).max()
        if err >= 1e-9:
            problems.append(f"attention rows block {i} off by {err:.2e}")
    softmax_err = np.abs(probs.sum(axis=1) - 1.0).max()
    if softmax_err >= 1e-9:
        problems.append(f"softmax rows off by {softmax_err:.2e}")

    no_pos = ModelConfig(use_positional_encoding=False)
    params_no_pos = init_parameters(no_pos, seed=9)
    perm = rng.permutation(config.seq_len)
    drift = np.abs(forward(params_no_pos, X[:, perm]) - forward(params_no_pos, X)).max()
    if drift >= 1e-9:
        problems.append(f"permutation drift {drift:.2e} with positions disabled")

    trained = end_to_end["params"]
    norm = end_to_end["normalization"]
    dataset = end_to_end["dataset"]
    split = end_to_end["split"]
    windows = norm.apply(dataset.windows[split.eval_indices[:16]])
    base = forward(trained, windows).argmax(axis=1)
    changed = False
    perms = [np.arange(config.seq_len)[::-1]] + [
        rng.permutation(config.seq_len) for _ in range(5)
    ]
    for p in perms:
        if np.any(forward(trained, windows[:, p]).argmax(axis=1) != base):
            changed = True
            break
    if not changed:
        problems.append("no permutation changed any argmax on the trained model")

    _verdict(6, not problems,
             "attention/softmax rows sum to 1; permutation-invariant without positions; "
             "trained model uses positions" if not problems else "; ".join(problems))


def test_criterion_7_online_offline_and_accuracy(end_to_end):
    params = end_to_end["params"]
    norm = end_to_end["normalization"]
    spec = end_to_end["filter_spec"]
    problems = []
    accuracies = {}
    for tissue, seed in (("liver", 21), ("heart", 22)):
        trace = clean_trace(tissue, seed=seed)
        outputs, summary = replay(trace, StreamState(params, norm, spec))
        online = np.stack([o.probs for o in outputs])
        offline = offline_predictions(trace, params, norm, spec)
        gap = np.abs(online - offline).max()
        if gap >= 1e-12:
            problems.append(f"{tissue}: online/offline gap {gap:.2e}")
        accuracies[tissue] = summary.report.accuracy
        if summary.report.accuracy < 0.93:
            problems.append(f"{tissue}: online accuracy {summary.report.accuracy:.4f} < 0.93")

    # all-zero input classifies as the neutral phase the zero-pad taught
    state = StreamState(params, norm, spec)
    zero_out = None
    for k in range(120):
        zero_out = state.push(k * 0.05, 0.0, 0.0)
    if zero_out.label != int(ClassLabel.NEUTRAL):
        problems.append(f"all-zero stream predicted {zero_out.label}")

    _verdict(7, not problems,
             f"online == offline within 1e-12; accuracy liver {accuracies['liver']:.4f}, "
             f"heart {accuracies['heart']:.4f}; zeros -> neutral"
             if not problems else "; ".join(problems))


def test_criterion_8_latency(end_to_end):
    params = end_to_end["params"]
    norm = end_to_end["normalization"]
    spec = end_to_end["filter_spec"]
    trace = clean_trace("liver", seed=23)
    StreamState(params, norm, spec).infer(0.0)  # warmup forward touches fresh pages
    outputs, summary = replay(trace, StreamState(params, norm, spec),
                              budget_ms=LATENCY_BUDGET_MS)
    latencies = np.array([o.latency_ms for o in outputs])
    problems = []
    if latencies.mean() > LATENCY_BUDGET_MS:
        problems.append(f"mean latency {latencies.mean():.2f} ms > {LATENCY_BUDGET_MS}")
    if latencies.max() > SAMPLE_PERIOD_MS:
        problems.append(f"max latency {latencies.max():.2f} ms > sample period")
    _verdict(8, not problems,
             f"per-sample latency mean {latencies.mean():.2f} ms, max {latencies.max():.2f} ms "
             f"(budget {LATENCY_BUDGET_MS} ms, period {SAMPLE_PERIOD_MS} ms)"
             if not problems else "; ".join(problems))


def test_criterion_9_persistence_and_split_hygiene(end_to_end, tmp_path):
    problems = []

    frames = synthesize_frames(CorpusConfig(frames_per_tissue=2, seed=31))
    small = build_dataset(frames, windows_per_frame=6, seed=32, filter_spec=DEFAULT_FILTER)
    write_dataset(tmp_path / "ds", small)
    again = read_dataset(tmp_path / "ds")
    if not (
        np.array_equal(again.windows, small.windows)
        and np.array_equal(again.labels, small.labels)
        and np.array_equal(again.starts, small.starts)
        and all(
            np.array_equal(a.f, b.f) and np.array_equal(a.t, b.t) and np.array_equal(a.x, b.x)
            for a, b in zip(again.frames, small.frames)
        )
    ):
        problems.append("dataset round-trip not bit-exact")

    params = end_to_end["params"]
    save_checkpoint(tmp_path / "model.npz", params,
                    normalization=end_to_end["normalization"],
                    filter_spec=end_to_end["filter_spec"])
    loaded, norm2, spec2 = load_checkpoint(tmp_path / "model.npz")
    if not all(np.array_equal(loaded.tensors[k], params.tensors[k]) for k in params.tensors):
        problems.append("checkpoint round-trip not bit-exact")
    if loaded.config != params.config or spec2 != end_to_end["filter_spec"]:
        problems.append("checkpoint metadata mismatch")

    dataset = end_to_end["dataset"]
    split = end_to_end["split"]
    pieces = [split.eval_indices] + split.fold_indices
    union = np.concatenate(pieces)
    if len(union) != dataset.n_examples or len(np.unique(union)) != dataset.n_examples:
        problems.append("folds + eval are not a disjoint cover")
    eval_frames = set(dataset.frame_ids[split.eval_indices].tolist())
    for fold in split.fold_indices:
        if not eval_frames.isdisjoint(dataset.frame_ids[fold].tolist()):
            problems.append("source frame appears in both folds and evaluation")
            break

    _verdict(9, not problems,
             "dataset and checkpoint reload bit-exactly; split is a leak-free disjoint cover"
             if not problems else "; ".join(problems))
