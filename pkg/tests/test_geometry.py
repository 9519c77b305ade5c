"""Geometric prototype extraction against brute-force oracles.

Oracles: BFS connected-component labeling for ROI recovery and a dense
covariance eigendecomposition for PCA.
"""

from __future__ import annotations

from collections import deque

import numpy as np
import pytest

from affordmap.errors import (
    ArgumentError,
    DegenerateFeaturesError,
    EmptyAttentionError,
    ShapeMismatchError,
)
from affordmap.geometry import (
    PartBasis,
    Roi,
    cosine_probe,
    load_basis,
    pca_decompose,
    project_into_reference_basis,
    roi_from_attention,
    save_basis,
)


# ------------------------------------------------------------------- oracles

def bfs_components(mask: np.ndarray) -> list[list[tuple[int, int]]]:
    """4-connected components by breadth-first search, scan order."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    comps = []
    for r in range(h):
        for c in range(w):
            if not mask[r, c] or seen[r, c]:
                continue
            comp = []
            queue = deque([(r, c)])
            seen[r, c] = True
            while queue:
                cr, cc = queue.popleft()
                comp.append((cr, cc))
                for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    nr, nc = cr + dr, cc + dc
                    if 0 <= nr < h and 0 <= nc < w and mask[nr, nc] and not seen[nr, nc]:
                        seen[nr, nc] = True
                        queue.append((nr, nc))
            comps.append(comp)
    return comps


def pca_covariance_oracle(patches: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Dense (1/N) covariance + eigendecomposition; eigenvalues descending."""
    x = patches.astype(np.float64)
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / x.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    return eigvals[order], eigvecs[:, order].T  # rows are components


def gapped_features(rng: np.random.Generator, h: int, w: int, c: int) -> np.ndarray:
    # decaying per-channel scales plant spectrum gaps so eigenvector
    # comparisons between two solvers stay well-conditioned
    scales = 2.0 ** (-np.arange(c) / 3.0)
    return (rng.normal(size=(h, w, c)) * scales).astype(np.float32)


# ----------------------------------------------------------------------- roi

def test_roi_single_pixel_grows_to_min_box():
    attn = np.zeros((8, 8), np.float32)
    attn[3, 3] = 1.0
    assert roi_from_attention(attn, 0.4, 0.0) == Roi(3, 3, 5, 5)


def test_roi_exact_block_recovery():
    attn = np.zeros((8, 8), np.float32)
    attn[2:6, 2:6] = 1.0
    assert roi_from_attention(attn, 0.5, 0.0) == Roi(2, 2, 6, 6)


def test_roi_picks_larger_blob():
    attn = np.zeros((10, 10), np.float32)
    attn[1:4, 1:4] = 1.0  # area 9
    attn[6:8, 6:8] = 1.0  # area 4
    roi = roi_from_attention(attn, 0.5, 0.0)
    comps = bfs_components(attn >= 0.5)
    biggest = max(comps, key=len)
    rows = [r for r, _ in biggest]
    cols = [c for _, c in biggest]
    assert roi == Roi(min(rows), min(cols), max(rows) + 1, max(cols) + 1)
    assert roi == Roi(1, 1, 4, 4)


def test_roi_component_bbox_matches_bfs_oracle():
    rng = np.random.default_rng(11)
    for _ in range(15):
        attn = (rng.random((12, 12)) > 0.72).astype(np.float32)
        if attn.max() == 0:
            continue
        comps = bfs_components(attn >= 0.4)
        biggest = max(comps, key=len)  # ties: scan order, same as the label rule
        rows = [r for r, _ in biggest]
        cols = [c for _, c in biggest]
        r0, c0 = min(rows), min(cols)
        r1, c1 = max(rows) + 1, max(cols) + 1
        if (r1 - r0) * (c1 - c0) < 4:
            continue  # growth rule covered elsewhere
        sizes = sorted(len(c) for c in comps)
        if len(sizes) > 1 and sizes[-1] == sizes[-2]:
            continue  # skip ambiguous ties between equal-size blobs
        assert roi_from_attention(attn, 0.4, 0.0) == Roi(r0, c0, r1, c1)


def test_roi_margin_expansion():
    attn = np.zeros((12, 12), np.float32)
    attn[4:8, 4:8] = 1.0  # 4x4 box, margin 0.25 -> 1 px per side
    assert roi_from_attention(attn, 0.5, 0.25) == Roi(3, 3, 9, 9)


def test_roi_margin_clamped_at_border():
    attn = np.zeros((6, 6), np.float32)
    attn[0:4, 0:4] = 1.0
    assert roi_from_attention(attn, 0.5, 0.5) == Roi(0, 0, 6, 6)


def test_roi_scale_invariance():
    rng = np.random.default_rng(12)
    attn = rng.random((9, 9)).astype(np.float32)
    a = roi_from_attention(attn, 0.6, 0.1)
    b = roi_from_attention(attn * 137.5, 0.6, 0.1)
    assert a == b


def test_roi_all_zero_rejected():
    with pytest.raises(EmptyAttentionError):
        roi_from_attention(np.zeros((8, 8), np.float32), 0.4, 0.0)


def test_roi_bad_threshold():
    with pytest.raises(ArgumentError):
        roi_from_attention(np.ones((8, 8), np.float32), 1.5, 0.0)


def test_roi_invariant_validation():
    with pytest.raises(ArgumentError):
        Roi(2, 2, 3, 3)  # area 1 < 4


# ----------------------------------------------------------------------- pca

def test_pca_two_value_hand_case():
    # patches alternate between (1,0) and (-1,0): covariance [[1,0],[0,0]],
    # top eigenvalue 1.0, direction (1,0), signed projections +/-1
    feats = np.zeros((2, 2, 2), np.float32)
    feats[:, 0] = (1.0, 0.0)
    feats[:, 1] = (-1.0, 0.0)
    basis = pca_decompose(feats, Roi(0, 0, 2, 2), 1)
    assert np.allclose(basis.directions, [[1.0, 0.0]], atol=1e-6)
    assert np.allclose(basis.explained_var, [1.0], atol=1e-6)
    assert np.allclose(basis.projections[0], [[1.0, -1.0], [1.0, -1.0]], atol=1e-6)
    assert np.allclose(basis.mean_vec, [0.0, 0.0], atol=1e-7)


def test_pca_constant_roi_rejected():
    feats = np.ones((4, 4, 3), np.float32)
    with pytest.raises(DegenerateFeaturesError):
        pca_decompose(feats, Roi(0, 0, 4, 4), 1)


def test_pca_k_out_of_range():
    feats = np.random.default_rng(13).normal(size=(4, 4, 3)).astype(np.float32)
    with pytest.raises(ArgumentError):
        pca_decompose(feats, Roi(0, 0, 2, 2), 5)
    with pytest.raises(ArgumentError):
        pca_decompose(feats, Roi(0, 0, 4, 4), 0)


def test_pca_roi_outside_grid():
    feats = np.random.default_rng(14).normal(size=(4, 4, 3)).astype(np.float32)
    with pytest.raises(ShapeMismatchError):
        pca_decompose(feats, Roi(0, 0, 6, 6), 1)


def test_pca_matches_covariance_oracle():
    rng = np.random.default_rng(15)
    for _ in range(5):
        feats = gapped_features(rng, 16, 16, 32)
        roi = Roi(2, 3, 14, 13)
        k = 3
        basis = pca_decompose(feats, roi, k)
        patches = feats[roi.row0 : roi.row1, roi.col0 : roi.col1].reshape(-1, 32)
        eig_o, vec_o = pca_covariance_oracle(patches)
        assert np.allclose(basis.explained_var, eig_o[:k], rtol=1e-4, atol=1e-8)
        proj_o = (patches - patches.mean(axis=0)) @ vec_o[:k].T
        proj = basis.projections[:, roi.row0 : roi.row1, roi.col0 : roi.col1].reshape(k, -1).T
        for i in range(k):
            a, b = proj[:, i], proj_o[:, i]
            assert min(np.abs(a - b).max(), np.abs(a + b).max()) < 1e-4


def test_pca_orthonormality_and_ordering():
    rng = np.random.default_rng(16)
    feats = gapped_features(rng, 10, 10, 12)
    basis = pca_decompose(feats, Roi(1, 1, 9, 9), 5)
    gram = basis.directions.astype(np.float64) @ basis.directions.astype(np.float64).T
    assert np.abs(gram - np.eye(5)).max() < 1e-5
    assert np.all(np.diff(basis.explained_var) <= 1e-8)
    assert np.all(basis.explained_var >= 0)


def test_pca_sign_convention():
    rng = np.random.default_rng(17)
    for _ in range(10):
        feats = gapped_features(rng, 8, 8, 6)
        basis = pca_decompose(feats, Roi(0, 0, 8, 8), 3)
        for i in range(3):
            flat = basis.projections[i].ravel()
            assert flat[np.argmax(np.abs(flat))] > 0


def test_pca_trace_identity():
    rng = np.random.default_rng(18)
    feats = gapped_features(rng, 8, 8, 6)
    roi = Roi(0, 0, 8, 8)
    basis = pca_decompose(feats, roi, 6)  # k = channels
    patches = feats[roi.row0 : roi.row1, roi.col0 : roi.col1].reshape(-1, 6).astype(np.float64)
    centered = patches - patches.mean(axis=0)
    total_var = float((centered**2).sum()) / patches.shape[0]
    assert abs(float(basis.explained_var.sum()) - total_var) < 1e-4


def test_pca_patch_permutation_invariance():
    rng = np.random.default_rng(19)
    feats = gapped_features(rng, 6, 8, 5)
    roi = Roi(1, 2, 5, 7)
    basis = pca_decompose(feats, roi, 3)

    block = feats[roi.row0 : roi.row1, roi.col0 : roi.col1].copy()
    flat = block.reshape(-1, 5)
    perm = rng.permutation(flat.shape[0])
    feats2 = feats.copy()
    feats2[roi.row0 : roi.row1, roi.col0 : roi.col1] = flat[perm].reshape(block.shape)
    basis2 = pca_decompose(feats2, roi, 3)

    assert np.allclose(basis.explained_var, basis2.explained_var, atol=1e-6)
    for i in range(3):
        a = np.sort(basis.projections[i][roi.row0 : roi.row1, roi.col0 : roi.col1].ravel())
        b = np.sort(basis2.projections[i][roi.row0 : roi.row1, roi.col0 : roi.col1].ravel())
        assert np.allclose(a, b, atol=1e-5)


def test_pca_projections_zero_outside_roi():
    rng = np.random.default_rng(20)
    feats = gapped_features(rng, 8, 8, 4)
    roi = Roi(2, 2, 6, 6)
    basis = pca_decompose(feats, roi, 2)
    mask = np.ones((8, 8), dtype=bool)
    mask[2:6, 2:6] = False
    assert np.all(basis.projections[:, mask] == 0)


# --------------------------------------------------------------- cosine probe

def test_probe_self_similarity():
    rng = np.random.default_rng(21)
    feats = rng.normal(size=(5, 5, 7)).astype(np.float32)
    out = cosine_probe(feats, feats[2, 3])
    assert abs(float(out[2, 3]) - 1.0) < 1e-5


def test_probe_orthogonal_zero():
    feats = np.zeros((3, 3, 4), np.float32)
    feats[:, :, 0] = 1.0
    probe = np.array([0, 1, 0, 0], np.float32)
    assert np.allclose(cosine_probe(feats, probe), 0.0, atol=1e-7)


def test_probe_antipodal():
    rng = np.random.default_rng(22)
    feats = rng.normal(size=(4, 4, 5)).astype(np.float32)
    out = cosine_probe(feats, -feats[1, 1])
    assert abs(float(out[1, 1]) + 1.0) < 1e-5


def test_probe_range_and_zero_norm_patch():
    rng = np.random.default_rng(23)
    feats = rng.normal(size=(6, 6, 4)).astype(np.float32)
    feats[0, 0] = 0.0
    out = cosine_probe(feats, rng.normal(size=4))
    assert out.min() >= -1.0 and out.max() <= 1.0
    assert out[0, 0] == 0.0


def test_probe_zero_norm_rejected():
    with pytest.raises(ArgumentError):
        cosine_probe(np.ones((3, 3, 4), np.float32), np.zeros(4))


# ----------------------------------------------------- reference-basis projection

def test_reference_projection_self_consistency():
    rng = np.random.default_rng(24)
    feats = gapped_features(rng, 8, 8, 6)
    roi = Roi(1, 1, 7, 7)
    basis = pca_decompose(feats, roi, 3)
    full = project_into_reference_basis(feats, basis)
    inside = (slice(roi.row0, roi.row1), slice(roi.col0, roi.col1))
    for i in range(3):
        assert np.allclose(full[i][inside], basis.projections[i][inside], atol=1e-5)


def test_reference_projection_of_mean_is_zero():
    rng = np.random.default_rng(25)
    feats = gapped_features(rng, 6, 6, 4)
    basis = pca_decompose(feats, Roi(0, 0, 6, 6), 2)
    const = np.broadcast_to(basis.mean_vec, (5, 5, 4)).astype(np.float32)
    assert np.allclose(project_into_reference_basis(const, basis), 0.0, atol=1e-5)


def test_reference_projection_matches_matrix_oracle():
    rng = np.random.default_rng(26)
    feats = gapped_features(rng, 6, 6, 5)
    basis = pca_decompose(feats, Roi(0, 0, 6, 6), 3)
    other = rng.normal(size=(4, 7, 5)).astype(np.float32)
    got = project_into_reference_basis(other, basis)
    oracle = (other.reshape(-1, 5) - basis.mean_vec) @ basis.directions.T
    assert np.allclose(got.reshape(3, -1).T, oracle, atol=1e-5)


def test_reference_projection_channel_mismatch():
    rng = np.random.default_rng(27)
    feats = gapped_features(rng, 6, 6, 5)
    basis = pca_decompose(feats, Roi(0, 0, 6, 6), 2)
    with pytest.raises(ShapeMismatchError):
        project_into_reference_basis(rng.normal(size=(4, 4, 9)).astype(np.float32), basis)


# ------------------------------------------------------------- serialization

def test_basis_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(28)
    feats = gapped_features(rng, 8, 8, 6)
    basis = pca_decompose(feats, Roi(1, 1, 7, 7), 3)
    save_basis(basis, tmp_path / "basis.npy", tmp_path / "basis.json")
    directions, explained_var, mean_vec, roi = load_basis(
        tmp_path / "basis.npy", tmp_path / "basis.json"
    )
    assert np.array_equal(directions, basis.directions)
    assert np.array_equal(explained_var, basis.explained_var)
    assert np.allclose(mean_vec, basis.mean_vec, atol=1e-6)
    assert roi == basis.roi
