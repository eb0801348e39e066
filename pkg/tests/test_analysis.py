import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from predvision.analysis import (
    AnalysisError, activity_gates, complex_contributors, frame_basis, modulation_index,
    nelder_mead, optimize_stimulus, phase_modulation, preserved_state, recurrent_jacobian,
    render_complex_contributors, render_dictionary_grid, render_patch, render_stc,
    render_v2_composite, save_png, selectivity, selectivity_search, spectrum, stability_report,
    stc_analysis, tile_response, top_indices, v2_contributors, write_spectrum,
)
from predvision.hierarchy import build, step
from predvision.predictive import BLOCK_PREV, BLOCK_SIMPLE
from predvision.stimuli import drifting_gratings

from conftest import random_frames, small_spec


def test_render_patch():
    col = np.arange(12, dtype=float)
    px = render_patch(col, 2)
    assert px.shape == (2, 2, 3) and px.dtype == np.uint8
    assert px.min() == 0 and px.max() == 255
    np.testing.assert_array_equal(render_patch(np.full(12, 3.0), 2), 128)
    assert render_patch(np.arange(24.0), 2, frames=2).shape == (2, 4, 3)


def test_dictionary_grid_shape(small_model):
    img = render_dictionary_grid(small_model.levels[0].dictionary.D, 8, separator=1)
    assert img.shape == (4 * 8 + 3, 4 * 8 + 3, 3)
    with pytest.raises(AnalysisError):
        render_dictionary_grid(np.zeros((10, 4)), 8)


def test_top_indices_ties():
    np.testing.assert_array_equal(top_indices([1.0, 3.0, 3.0, -5.0], 2), [1, 2])
    np.testing.assert_array_equal(top_indices([1.0, 3.0, 3.0, -5.0], 1, absolute=True), [3])


def test_contributors(small_model):
    lvl = small_model.levels[0]
    J = lvl.spec.J
    lvl.weights.C[BLOCK_SIMPLE * J + 5, 2] = 0.9
    lvl.weights.C[BLOCK_SIMPLE * J + 7, 2] = 0.4
    lvl.weights.C[BLOCK_PREV * J + 1, 2] = 5.0     # other blocks are ignored
    idx, w = complex_contributors(lvl.weights.C, 2, top_n=2)
    np.testing.assert_array_equal(idx, [5, 7])
    np.testing.assert_allclose(w, [0.9, 0.4])
    with pytest.raises(AnalysisError):
        complex_contributors(lvl.weights.C, J)
    img = render_complex_contributors(small_model, 2, top_n=4)
    assert img.shape == (17, 17, 3)
    with pytest.raises(AnalysisError):
        render_complex_contributors(small_model, 2, level=2)


def test_v2_composite(small_model):
    groups = v2_contributors(small_model, 0)
    assert len(groups) == 4 and all(len(idx) == 9 for idx, _ in groups)
    img = render_v2_composite(small_model, 0)
    assert img.shape[0] == img.shape[1]
    with pytest.raises(AnalysisError):
        v2_contributors(small_model, 99)


def test_save_png(tmp_path):
    from PIL import Image
    save_png(tmp_path / "a.png", np.zeros((3, 4, 3)), upscale=2)
    assert Image.open(tmp_path / "a.png").size == (8, 6)


def test_stc_recovers_planted_filter(tmp_path):
    rng = np.random.default_rng(0)
    w = rng.standard_normal(48)
    w /= np.linalg.norm(w)
    result = stc_analysis(lambda X: np.maximum(X @ w, 0.0), 48, num_frames=40_000, seed=1)
    assert abs(result.excitatory[0] @ w) > 0.9
    assert np.all(np.diff(result.eigenvalues) <= 1e-9)
    again = stc_analysis(lambda X: np.maximum(X @ w, 0.0), 48, num_frames=40_000, seed=1)
    np.testing.assert_array_equal(result.eigenvalues, again.eigenvalues)
    write_spectrum(tmp_path / "s.csv", result)
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 49
    assert render_stc(result, 4).shape[0] == 2 * 4 + 1


def test_stc_rejects_silent_cells():
    with pytest.raises(AnalysisError):
        stc_analysis(lambda X: np.zeros(len(X)), 12, num_frames=100)
    with pytest.raises(AnalysisError):
        stc_analysis(lambda X: -np.ones(len(X)), 12, num_frames=100)


def test_tile_response(small_model):
    fn = tile_response(small_model, 3, kind="simple")
    X = np.random.default_rng(0).uniform(-127.5, 127.5, (20, 192))
    r = fn(X)
    assert r.shape == (20,) and np.all(r >= 0)
    with pytest.raises(AnalysisError):
        tile_response(small_model, 3, level=2)


def test_selectivity():
    assert selectivity(np.array([1.0, 3.0]), 1) == 0.75
    assert selectivity(np.zeros(3), 0) is None


def test_selectivity_search_leaves_model(small_model):
    frames = random_frames(12, 16)
    step(small_model, frames[0])
    banks = [lvl.output.copy() for lvl in small_model.levels]
    count = small_model.step_count
    hits, n = selectivity_search(small_model, frames, 2, kind="simple", stride=4, top=2)
    assert n == 3
    assert len(hits) <= 2
    assert all(h.frame_index % 4 == 0 for h in hits)
    assert hits == sorted(hits, key=lambda h: -h.s)
    for b, lvl in zip(banks, small_model.levels):
        np.testing.assert_array_equal(b, lvl.output)
    assert small_model.step_count == count


def test_nelder_mead_quadratic():
    rng = np.random.default_rng(0)
    target = rng.standard_normal(5)
    x, f, nit = nelder_mead(lambda v: float(np.sum((v - target) ** 2)), np.zeros(5))
    np.testing.assert_allclose(x, target, atol=1e-4)
    assert nit <= 2000


@given(st.integers(0, 1000))
@settings(max_examples=10, deadline=None)
def test_nelder_mead_never_worse(seed):
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal(3)
    f = lambda v: float(np.sum(np.abs(np.sin(3 * v))))
    _, best, _ = nelder_mead(f, x0, max_iter=20)
    assert best <= f(x0)


def test_frame_basis():
    frames = random_frames(30, 4)
    mean, basis, spread = frame_basis(frames, 10)
    assert basis.shape == (10, 48)
    np.testing.assert_allclose(basis @ basis.T, np.eye(10), atol=1e-9)
    assert np.all(np.diff(spread) <= 1e-9)
    with pytest.raises(AnalysisError):
        frame_basis(frames, 40)


def test_optimize_stimulus_not_worse(small_model):
    frames = random_frames(40, 16)
    out = optimize_stimulus(small_model, frames, 1, kind="simple", basis_dim=8, max_iter=30)
    assert out.s >= out.s_initial
    assert out.image.shape == (16, 16, 3)


def _active_model():
    """Random recurrent weights plus a large constant drive so every cell is active."""
    model = build(small_spec(), seed=0)
    rng = np.random.default_rng(1)
    for lvl in model.levels:
        J, K = lvl.spec.J, lvl.spec.K
        lvl.weights.C[:] = 0.002 * rng.standard_normal(lvl.weights.C.shape)
        lvl.weights.C[K] = 50.0          # constant Simple cell drives every output
        lvl.state.v[:] = rng.uniform(0.5, 2.0, lvl.state.v.shape)
    return model


def test_jacobian_matches_finite_differences():
    model = _active_model()
    frame = random_frames(1, 16)[0]
    step(model, frame)
    step(model, frame)
    lvl = model.levels[0]
    base_banks = [l.output.copy() for l in model.levels]

    def next_output(bank):
        with preserved_state(model):
            lvl.output = bank.reshape(lvl.output.shape).copy()
            return step(model, frame)[0].ravel()

    x0 = base_banks[0].ravel()
    f0 = next_output(x0)
    h = 1e-6
    numeric = np.empty((x0.size, x0.size))
    for j in range(x0.size):
        e = x0.copy()
        e[j] += h
        numeric[:, j] = (next_output(e) - f0) / h
    M = recurrent_jacobian(model)[0].toarray()
    np.testing.assert_allclose(M, numeric, atol=1e-5)


def test_joint_jacobian_has_feedback():
    model = _active_model()
    joint = recurrent_jacobian(model, joint=True)
    per = recurrent_jacobian(model)
    n1 = per[0].shape[0]
    assert joint.shape[0] == n1 + per[1].shape[0]
    np.testing.assert_array_equal(joint[:n1, :n1].toarray(), per[0].toarray())
    assert joint[:n1, n1:].nnz > 0
    assert joint[n1:, :n1].nnz == 0


def test_spectrum_dense_and_sparse():
    from scipy.sparse import csr_matrix
    M = csr_matrix(np.diag(np.arange(1.0, 21.0)))
    np.testing.assert_allclose(np.sort(spectrum(M).real), np.arange(1.0, 21.0))
    assert spectrum(M, dense_limit=5, k=3).real.max() == pytest.approx(20.0)


def test_stability_report(small_model, tmp_path):
    rep = stability_report(small_model)
    assert rep["stable"] and rep["max_real"] == 0.0
    model = _active_model()
    gates = activity_gates(model, random_frames(4, 16))
    assert all(np.all(g == 1.0) for g in gates)
    rep = stability_report(model, gates=[np.zeros_like(g) for g in gates])
    assert rep["max_real"] == 0.0
    assert len(rep["levels"]) == 2


def test_modulation_index():
    np.testing.assert_allclose(modulation_index([[1.0, 3.0], [2.0, 2.0], [0.0, 4.0]]),
                               [0.5, 0.0, 1.0])
    assert np.isnan(modulation_index([0.0, 0.0]))


def test_phase_modulation_runs(small_model):
    s, c, details = phase_modulation(small_model, orientations=2, periods=(4.0,), phase_steps=4,
                                     warmup=2, cycles=1)
    assert 0.0 <= s <= 1.0
    assert details["simple_cells"] > 0
