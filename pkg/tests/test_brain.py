import numpy as np

from recon3d.data.brain import make_subject, pooling_windows, simulate_fmri, stimulus_response
from recon3d.data.render import render_views
from recon3d.data.shapes import generate_shape, sample_spec


def _views(category=3, seed=5):
    return render_views(generate_shape(sample_spec(category, seed)), k=12, size=224)


def test_frames_are_zscored():
    subj = make_subject("s", 1)
    trial = simulate_fmri(_views(), subj, seed=0)
    assert trial.frames.shape == (10, 256, 256)
    for f in trial.frames:
        assert abs(f.mean()) < 1e-3
        assert abs(f.std() - 1) < 1e-2


def test_deterministic():
    subj = make_subject("s", 1)
    v = _views()
    a = simulate_fmri(v, subj, seed=3).frames
    b = simulate_fmri(v, make_subject("s", 1), seed=3).frames
    assert np.array_equal(a, b)
    c = simulate_fmri(v, subj, seed=4).frames
    assert not np.array_equal(a, c)


def test_subjects_differ():
    v = _views()
    a = simulate_fmri(v, make_subject("a", 1), seed=0).frames
    b = simulate_fmri(v, make_subject("b", 2), seed=0).frames
    r = [np.corrcoef(x.ravel(), y.ravel())[0, 1] for x, y in zip(a, b)]
    assert np.mean(r) < 0.9


def test_roi_nonempty_and_energy():
    for seed in range(4):
        subj = make_subject("s", seed)
        assert subj.roi_mask.any() and not subj.roi_mask.all()
        assert subj.roi_energy_fraction() >= 0.8


def test_signal_variance_inside_roi():
    # >= 80% of stimulus-driven variance (over objects, noise 0) lies inside the ROI
    subj = make_subject("s", 7)
    resp = np.stack([stimulus_response(_views(c, 11 + c), subj) for c in range(8)])  # (obj, frames, px)
    var = resp.var(axis=0).sum(axis=0)
    inside = var[subj.roi_mask.ravel()].sum()
    assert inside / var.sum() >= 0.8


def test_lag_shifts_response():
    w = pooling_windows(12, 10, lag=2, pool_width=3)
    assert len(w[0]) == 0 and len(w[1]) == 0
    assert len(w[2]) > 0
    # every view reaches some frame when the trial is long enough to cover the lag
    seen = np.concatenate(pooling_windows(12, 10, 0, 1))
    assert sorted(seen) == list(range(12))
