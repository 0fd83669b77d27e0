"""Online classification over streaming (time, position, force) samples.

A session owns one stateful filter cascade per channel and a ring buffer of
the most recent filtered samples.  Every pushed sample yields a prediction
for the 120-sample window ending at it; windows shorter than 120 samples are
left-padded with literal zeros before normalization, exactly matching the
training-time zero-pad augmentation.  Filter state is continuous across the
whole session and never reset per window; the offline comparison path
replicates that discipline, so streaming and batch predictions agree.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .dataset import Normalization
from .evaluation import EvalReport, score
from .filters import FilterSpec, design_butterworth
from .mechanics import InsertionTrace
from .model import ModelParameters, forward


@dataclass
class StreamOutput:
    t: float
    label: int
    probs: np.ndarray
    latency_ms: float


class StreamState:
    """Single-owner streaming session: filters, ring buffer, and the model."""

    def __init__(
        self,
        params: ModelParameters,
        normalization: Normalization | None = None,
        filter_spec: FilterSpec | None = None,
        dtype=np.float64,
    ):
        self.params = params if params.dtype == np.dtype(dtype) else params.astype(dtype)
        self.normalization = normalization
        self.window_len = params.config.seq_len
        self._fx = design_butterworth(filter_spec) if filter_spec else None
        self._ff = design_butterworth(filter_spec) if filter_spec else None
        self._buffer = np.zeros((self.window_len, 2))
        self._count = 0
        self._last_t = -math.inf

    @property
    def samples_seen(self) -> int:
        return self._count

    def observe(self, t: float, x: float, f: float) -> None:
        """Filter one sample into the buffer without running inference."""
        if not (math.isfinite(t) and math.isfinite(x) and math.isfinite(f)):
            raise ValueError(f"non-finite stream sample (t={t}, x={x}, f={f})")
        if t <= self._last_t:
            raise ValueError(f"non-monotone timestamp {t} after {self._last_t}")
        self._last_t = t
        if self._fx is not None:
            x = self._fx.step(x)
            f = self._ff.step(f)
        self._buffer[self._count % self.window_len] = (x, f)
        self._count += 1

    def window(self) -> np.ndarray:
        """Current model window: left zero pad plus the filtered tail, in order."""
        w = np.zeros((self.window_len, 2))
        n = min(self._count, self.window_len)
        if n:
            idx = (np.arange(self._count - n, self._count)) % self.window_len
            w[self.window_len - n :] = self._buffer[idx]
        return w

    def infer(self, t: float) -> StreamOutput:
        """Classify the current window; latency covers assembly + normalization + forward."""
        start = time.perf_counter()
        window = self.window()
        if self.normalization is not None:
            window = self.normalization.apply(window)
        probs = forward(self.params, window[None, :, :])[0]
        latency_ms = (time.perf_counter() - start) * 1e3
        return StreamOutput(t=t, label=int(probs.argmax()), probs=probs, latency_ms=latency_ms)

    def push(self, t: float, x: float, f: float) -> StreamOutput:
        """Ingest one sample and return the prediction for the window ending at it."""
        self.observe(t, x, f)
        return self.infer(t)


@dataclass
class ReplaySummary:
    n: int
    n_predicted: int
    report: EvalReport
    mean_latency_ms: float
    max_latency_ms: float
    budget_ms: float
    budget_fraction: float
    sample_period_ms: float | None

    def lines(self) -> list:
        r = self.report
        out = [
            f"samples: {self.n} ({self.n_predicted} predicted)",
            f"online accuracy: {r.accuracy:.4f}",
        ]
        for name, value in (
            ("neutral", r.a_neutral),
            ("pre-puncture", r.a_pre),
            ("puncture", r.a_punc),
            ("tissue", r.a_tissue),
        ):
            out.append(
                f"  {name}: {'undefined' if value is None else f'{value:.4f}'}"
            )
        out.append(
            f"latency: mean {self.mean_latency_ms:.3f} ms, max {self.max_latency_ms:.3f} ms"
        )
        out.append(
            f"within {self.budget_ms:.1f} ms budget: {self.budget_fraction * 100:.1f}%"
        )
        if self.sample_period_ms:
            out.append(f"sample period: {self.sample_period_ms:.1f} ms")
        return out


def replay(
    trace: InsertionTrace,
    state: StreamState,
    budget_ms: float = 10.0,
    decimate: int = 1,
):
    """Stream a recorded trace through a fresh session sample by sample.

    Returns one StreamOutput per predicted sample and a summary with per-phase
    online accuracy against the trace's labels and latency statistics.
    """
    if decimate < 1:
        raise ValueError("decimate must be at least 1")
    if state.samples_seen:
        raise ValueError("replay needs a fresh stream state")
    outputs: list[StreamOutput] = []
    predicted_truth: list[int] = []
    for k in range(len(trace)):
        if k % decimate == 0:
            out = state.push(trace.t[k], trace.x[k], trace.f[k])
            outputs.append(out)
            predicted_truth.append(int(trace.label[k]))
        else:
            state.observe(trace.t[k], trace.x[k], trace.f[k])
    latencies = np.array([o.latency_ms for o in outputs])
    report = score([o.label for o in outputs], predicted_truth)
    period = None
    if trace.sample_rate:
        period = 1e3 / trace.sample_rate
    summary = ReplaySummary(
        n=len(trace),
        n_predicted=len(outputs),
        report=report,
        mean_latency_ms=float(latencies.mean()),
        max_latency_ms=float(latencies.max()),
        budget_ms=budget_ms,
        budget_fraction=float((latencies <= budget_ms).mean()),
        sample_period_ms=period,
    )
    return outputs, summary


def offline_predictions(
    trace: InsertionTrace,
    params: ModelParameters,
    normalization: Normalization | None = None,
    filter_spec: FilterSpec | None = None,
    dtype=np.float64,
    batch_size: int = 256,
) -> np.ndarray:
    """Batch-path predictions over the same windows the streaming path builds.

    Channels are filtered once over the whole trace (equivalent to stepping,
    bit for bit), then every left-zero-padded window ending at sample k is
    assembled and classified in batches.
    """
    params = params if params.dtype == np.dtype(dtype) else params.astype(dtype)
    x = np.asarray(trace.x, float)
    f = np.asarray(trace.f, float)
    if filter_spec is not None:
        x = design_butterworth(filter_spec).apply(x)
        f = design_butterworth(filter_spec).apply(f)
    channels = np.column_stack([x, f])
    n = len(channels)
    window_len = params.config.seq_len
    windows = np.zeros((n, window_len, 2))
    for k in range(n):
        take = min(k + 1, window_len)
        windows[k, window_len - take :] = channels[k + 1 - take : k + 1]
    if normalization is not None:
        windows = normalization.apply(windows)
    probs = np.empty((n, params.config.num_classes))
    for lo in range(0, n, batch_size):
        probs[lo : lo + batch_size] = forward(params, windows[lo : lo + batch_size])
    return probs
