import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from grae.mds import Embedding
from grae.stitch import (
    AnchorResidualWarning,
    SimilarityTransform,
    StitchError,
    StitchPlan,
    default_anchor_count,
    make_plan,
    procrustes,
    procrustes_residual,
    read_plan,
    stitch_embeddings,
    write_plan,
)


def rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, s], [-s, c]])


def test_plan_arithmetic():
    plan = make_plan(100, 60, 20, seed=0)
    assert plan.batch_count == 2
    assert [len(b) for b in plan.batches] == [60, 60]
    for b in plan.batches:
        np.testing.assert_array_equal(b[:20], plan.anchor_indices)
    assert len(set(plan.batches[0]) & set(plan.batches[1])) == 20


@given(st.integers(30, 400), st.integers(0, 1000))
def test_plan_partitions_non_anchor_rows(n, seed):
    batch_size = max(12, n // 3)
    anchors = 8
    if n <= batch_size:
        return
    plan = make_plan(n, batch_size, anchors, seed)
    uniques = np.concatenate([plan.unique_indices(i) for i in range(plan.batch_count)])
    assert len(uniques) == len(set(uniques))
    assert sorted(set(uniques) | set(plan.anchor_indices)) == list(range(n))
    assert not set(uniques) & set(plan.anchor_indices)
    assert plan.batch_count == int(np.ceil((n - anchors) / (batch_size - anchors)))
    assert all(len(b) <= batch_size for b in plan.batches)


def test_plan_deterministic_and_errors():
    a, b = make_plan(200, 50, 10, 3), make_plan(200, 50, 10, 3)
    for x, y in zip(a.batches, b.batches):
        np.testing.assert_array_equal(x, y)
    with pytest.raises(StitchError):
        make_plan(100, 20, 20, 0)
    with pytest.raises(StitchError):
        make_plan(50, 60, 10, 0)


def test_default_anchor_count():
    assert default_anchor_count(1000) == 50
    assert default_anchor_count(4000) == 80
    assert default_anchor_count(10001) == 201


def test_procrustes_identity(rng):
    a = rng.normal(size=(10, 2))
    tr = procrustes(a, a)
    np.testing.assert_allclose(tr.rotation, np.eye(2), atol=1e-12)
    assert tr.scale == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(tr.translation, 0.0, atol=1e-12)
    assert procrustes_residual(a, a, tr) < 1e-12


def test_procrustes_known_transform(rng):
    a = rng.normal(size=(15, 2))
    r90 = rot(np.pi / 2)
    b = 2.0 * a @ r90 + np.array([3.0, -1.0])
    tr = procrustes(a, b)
    assert tr.scale == pytest.approx(2.0, abs=1e-9)
    np.testing.assert_allclose(tr.rotation, r90, atol=1e-9)
    np.testing.assert_allclose(tr.translation, [3.0, -1.0], atol=1e-9)


def test_procrustes_reflection(rng):
    a = rng.normal(size=(12, 2))
    b = a * np.array([1.0, -1.0])
    tr = procrustes(a, b)
    assert np.linalg.det(tr.rotation) == pytest.approx(-1.0, abs=1e-12)
    assert procrustes_residual(a, b, tr) < 1e-9


def test_procrustes_3d(rng):
    a = rng.normal(size=(20, 3))
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    b = 0.5 * a @ q + 1.0
    tr = procrustes(a, b)
    np.testing.assert_allclose(tr.rotation.T @ tr.rotation, np.eye(3), atol=1e-10)
    assert procrustes_residual(a, b, tr) < 1e-9


@given(st.integers(0, 10_000), st.floats(0.1, 10), st.floats(0, 2 * np.pi), st.booleans())
def test_procrustes_residual_invariant_under_source_similarity(seed, scale, theta, flip):
    r = np.random.default_rng(seed)
    a = r.normal(size=(10, 2))
    b = r.normal(size=(10, 2))
    m = rot(theta) @ (np.diag([1.0, -1.0]) if flip else np.eye(2))
    a2 = scale * a @ m + r.normal(size=2)
    res1 = procrustes_residual(a, b, procrustes(a, b))
    res2 = procrustes_residual(a2, b, procrustes(a2, b))
    assert abs(res1 - res2) < 1e-9


def test_procrustes_errors(rng):
    with pytest.raises(StitchError):
        procrustes(np.ones((5, 2)), rng.normal(size=(5, 2)))
    with pytest.raises(StitchError):
        procrustes(rng.normal(size=(5, 2)), rng.normal(size=(4, 2)))
    with pytest.raises(StitchError):
        procrustes(rng.normal(size=(2, 2)), rng.normal(size=(2, 2)))


def test_similarity_compose(rng):
    a = SimilarityTransform(rot(0.3), 2.0, np.array([1.0, 2.0]))
    b = SimilarityTransform(rot(-1.1) @ np.diag([1, -1]), 0.5, np.array([-3.0, 0.5]))
    p = rng.normal(size=(5, 2))
    np.testing.assert_allclose(a.compose(b).apply(p), a.apply(b.apply(p)), atol=1e-12)


def _split_config(config, plan, rng):
    out = []
    for i, idx in enumerate(plan.batches):
        m = rot(rng.uniform(0, 2 * np.pi)) @ (np.diag([1.0, -1.0]) if i % 2 else np.eye(2))
        out.append(Embedding(rng.uniform(0.5, 3) * config[idx] @ m + rng.normal(size=2)))
    return out


def test_stitch_recovers_common_configuration(rng):
    config = rng.normal(size=(120, 2))
    plan = make_plan(120, 70, 20, seed=1)
    stitched = stitch_embeddings(plan, _split_config(config, plan, rng))
    assert stitched.source == "stitched"
    tr = procrustes(stitched.coords, config)
    assert procrustes_residual(stitched.coords, config, tr) < 1e-9
    assert max(stitched.anchor_residuals) < 1e-9


def test_stitch_single_batch_identity(rng):
    coords = rng.normal(size=(30, 2))
    plan = StitchPlan(batches=[np.arange(30)], anchor_indices=np.arange(5))
    out = stitch_embeddings(plan, [Embedding(coords)])
    np.testing.assert_allclose(out.coords, coords)


def test_stitch_warns_on_large_residual(rng):
    plan = make_plan(100, 60, 20, seed=0)
    embs = [Embedding(rng.normal(size=(60, 2))) for _ in plan.batches]
    with pytest.warns(AnchorResidualWarning):
        stitch_embeddings(plan, embs, warn_fraction=0.01)


def test_stitch_errors(rng):
    plan = make_plan(100, 60, 20, seed=0)
    with pytest.raises(StitchError):
        stitch_embeddings(plan, [Embedding(rng.normal(size=(60, 2)))])
    with pytest.raises(StitchError):
        stitch_embeddings(plan, [Embedding(rng.normal(size=(60, 2))), Embedding(rng.normal(size=(59, 2)))])


def test_plan_manifest_roundtrip(tmp_path):
    plan = make_plan(300, 100, 25, seed=9)
    write_plan(plan, tmp_path / "plan.txt")
    back = read_plan(tmp_path / "plan.txt")
    np.testing.assert_array_equal(back.anchor_indices, plan.anchor_indices)
    assert back.batch_count == plan.batch_count
    for a, b in zip(back.batches, plan.batches):
        np.testing.assert_array_equal(a, b)
    text = (tmp_path / "plan.txt").read_text().splitlines()
    assert text[0] == "# stitch plan v1"
    assert text[1].startswith("anchors: ")
    assert text[2].startswith("batch 0: ")


def test_plan_manifest_rejects_bad_files(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("anchors: 1 2\nbatch 0: 2 1 5\n")
    with pytest.raises(StitchError):
        read_plan(p)
    p.write_text("what: 1\n")
    with pytest.raises(StitchError):
        read_plan(p)
