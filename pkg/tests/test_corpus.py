import numpy as np

from needlesense.corpus import CorpusConfig, frame_motion, nominal_scene, synthesize_frames
from needlesense.dataset import FRAME_LEN
from needlesense.filters import FilterSpec
from needlesense.labels import ClassLabel
from needlesense.mechanics import Cavity, TissueProfile


def test_frame_motion_sample_counts():
    assert frame_motion(120).num_samples == FRAME_LEN
    assert frame_motion(100).num_samples == FRAME_LEN
    motion = frame_motion(100)
    velocities = motion.velocity_per_sample()
    assert np.all(velocities[:100] == 2.0)
    assert np.all(velocities[100:] == 0.0)


def test_nominal_scene_layers():
    scene = nominal_scene("heart", gap=2.5)
    assert isinstance(scene.layers[0], Cavity)
    assert scene.layers[0].length == 2.5
    assert isinstance(scene.layers[1], TissueProfile)
    assert scene.layers[1].tissue_type == ClassLabel.HEART


def test_synthesize_covers_all_tissues():
    frames = synthesize_frames(CorpusConfig(frames_per_tissue=2, seed=0))
    assert len(frames) == 10
    assert {f.tissue for f in frames} == set(
        (ClassLabel.LIVER, ClassLabel.KIDNEY, ClassLabel.HEART, ClassLabel.BELLY, ClassLabel.HOCK)
    )
    assert [f.frame_id for f in frames] == list(range(10))
    for frame in frames:
        assert len(frame.t) == FRAME_LEN
        assert frame.scene is not None
        assert frame.seed is not None


def test_synthesize_deterministic():
    a = synthesize_frames(CorpusConfig(frames_per_tissue=2, seed=33))
    b = synthesize_frames(CorpusConfig(frames_per_tissue=2, seed=33))
    for fa, fb in zip(a, b):
        assert np.array_equal(fa.f, fb.f)
        assert np.array_equal(fa.x, fb.x)
        assert np.array_equal(fa.labels, fb.labels)
    c = synthesize_frames(CorpusConfig(frames_per_tissue=2, seed=34))
    assert not np.array_equal(a[0].f, c[0].f)


def test_filtering_changes_channels_but_not_labels():
    raw = synthesize_frames(CorpusConfig(frames_per_tissue=1, seed=5, filter_spec=None))
    filt = synthesize_frames(
        CorpusConfig(frames_per_tissue=1, seed=5, filter_spec=FilterSpec(6, 5.0, 20.0))
    )
    for a, b in zip(raw, filt):
        assert np.array_equal(a.labels, b.labels)
        assert not np.array_equal(a.f, b.f)


def test_filter_position_flag():
    both = synthesize_frames(CorpusConfig(frames_per_tissue=1, seed=5))
    force_only = synthesize_frames(
        CorpusConfig(frames_per_tissue=1, seed=5, filter_position=False)
    )
    assert not np.array_equal(both[0].x, force_only[0].x)
    assert np.array_equal(both[0].f, force_only[0].f)
