import numpy as np
import pytest

import ggdd.tensor_algebra as ta
from ggdd.errors import BadMagic, BandTooHigh, DimMismatch, GridMismatch, TruncatedPayload
from ggdd.grid_fields import (
    Grid,
    ScalarField,
    TensorField,
    VectorField,
    inner_product,
    norm,
    project_subspace,
    random_smooth_field,
    read_field,
    subspace,
    write_field,
    zeros,
)

PINNED_FIELD_MAX = 4.992366862944202  # seed=0, band=2, 16^3 periodic scalar


def test_grid_invariants():
    g = Grid((8, 8, 8), "zero", (1.0, 1.0, 1.0))
    assert g.spacing == (1.0 / 9,) * 3
    gp = Grid((8, 8, 8), "periodic")
    assert gp.spacing == (0.125,) * 3
    with pytest.raises(ValueError):
        Grid((2, 8, 8), "zero")
    g2 = Grid((8, 6, 4), "zero", (1.0, 2.0, 0.5))
    assert g2.diameter == pytest.approx(np.sqrt(1 + 4 + 0.25))


def test_inner_product_constant_volume():
    g = Grid((16, 16, 16), "zero")
    one = ScalarField(g, np.ones(g.dims))
    # node measure misses the boundary half-cells, approaches 1 as n grows
    assert inner_product(one, one) == pytest.approx((16 / 17) ** 3)


def test_inner_product_sym_skw_orthogonal():
    g = Grid((6, 6, 6), "zero")
    a = np.array([1.0, 2.0, 3.0])
    skw_const = np.broadcast_to(ta.spn(a)[..., None, None, None], (3, 3) + g.dims).copy()
    sym_const = np.broadcast_to(np.diag([1.0, 2.0, -1.0])[..., None, None, None],
                                (3, 3) + g.dims).copy()
    f = TensorField(g, skw_const)
    h = TensorField(g, sym_const)
    assert abs(inner_product(f, h)) <= 1e-14


def test_inner_product_symmetric_bitexact_and_positive():
    g = Grid((8, 8, 8), "periodic")
    f = random_smooth_field(g, "vector", 1, 2)
    h = random_smooth_field(g, "vector", 2, 2)
    assert inner_product(f, h) == inner_product(h, f)
    assert inner_product(f, f) > 0


def test_inner_product_bilinear():
    g = Grid((6, 6, 6), "zero")
    f = random_smooth_field(g, "scalar", 3, 1)
    h = random_smooth_field(g, "scalar", 4, 1)
    w = random_smooth_field(g, "scalar", 5, 1)
    lhs = inner_product(f + 2.0 * h, w)
    rhs = inner_product(f, w) + 2.0 * inner_product(h, w)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_grid_mismatch():
    f = ScalarField(Grid((6, 6, 6), "zero"), np.zeros((6, 6, 6)))
    h = ScalarField(Grid((8, 8, 8), "zero"), np.zeros((8, 8, 8)))
    with pytest.raises(GridMismatch):
        inner_product(f, h)


@pytest.mark.parametrize("name,dim", [("R", 1), ("RT0", 4), ("RM", 6)])
def test_subspace_dimensions_and_gram(name, dim):
    g = Grid((6, 6, 6), "zero")
    S = subspace(g, name)
    assert S.dimension == dim
    assert np.abs(S.gram() - np.eye(dim)).max() <= 1e-12


def test_rm_2d_dimension():
    S = subspace(Grid((6, 6), "zero", (1.0, 1.0)), "RM")
    assert S.dimension == 3


def test_project_rt0_reproduces_affine():
    g = Grid((8, 8, 8), "zero")
    S = subspace(g, "RT0")
    X = g.coords()
    v = VectorField(g, np.stack([2.0 * X[0] + 0.5, 2.0 * X[1] - 1.0, 2.0 * X[2] + 3.0]))
    proj, comp = project_subspace(v, S)
    assert norm(comp) <= 1e-10 * norm(v)


def test_project_idempotent_selfadjoint():
    g = Grid((6, 6, 6), "zero")
    S = subspace(g, "RT0")
    f = random_smooth_field(g, "vector", 7, 1)
    h = random_smooth_field(g, "vector", 8, 1)
    p1, _ = project_subspace(f, S)
    p2, _ = project_subspace(p1, S)
    assert norm(p2 - p1) <= 1e-12 * max(norm(f), 1e-300)
    ph, _ = project_subspace(h, S)
    assert inner_product(p1, h) == pytest.approx(inner_product(f, ph), rel=1e-10, abs=1e-12)


def test_project_zero_mean_onto_constants():
    g = Grid((6, 6, 6), "zero")
    S = subspace(g, "R")
    f = random_smooth_field(g, "scalar", 9, 1)
    mean_part, _ = project_subspace(f, S)
    fz = f - mean_part
    proj, _ = project_subspace(fz, S)
    assert norm(proj) <= 1e-12 * max(norm(f), 1e-300)


def test_random_field_deterministic_and_pinned():
    g = Grid((16, 16, 16), "periodic")
    f1 = random_smooth_field(g, "scalar", 0, 2)
    f2 = random_smooth_field(g, "scalar", 0, 2)
    assert np.array_equal(f1.data, f2.data)
    assert f1.data.max() == pytest.approx(PINNED_FIELD_MAX, rel=1e-14)


def test_random_field_band_edges():
    gz = Grid((8, 8, 8), "zero")
    assert np.all(random_smooth_field(gz, "scalar", 1, 0).data == 0.0)
    gp = Grid((8, 8, 8), "periodic")
    f = random_smooth_field(gp, "scalar", 1, 0)
    assert np.ptp(f.data) <= 1e-14  # DC only
    with pytest.raises(BandTooHigh):
        random_smooth_field(gz, "scalar", 1, 3)


def test_random_field_zero_mode_vanishes_at_boundary_layer():
    # sine series extends by zero smoothly: check smallness near faces
    g = Grid((16, 16, 16), "zero")
    f = random_smooth_field(g, "scalar", 11, 2)
    face = np.abs(f.data[0]).max()
    assert face <= 0.8 * np.abs(f.data).max()  # tapered toward the boundary


def test_fld1_roundtrip(tmp_path):
    g = Grid((6, 5, 4), "zero", (1.0, 2.0, 0.5))
    f = random_smooth_field(g, "tensor", 3, 1)
    t = TensorField(g, ta.sym(f.data), claims_symmetric=True)
    path = tmp_path / "field.fld"
    write_field(path, t)
    back = read_field(path)
    assert isinstance(back, TensorField)
    assert back.claims_symmetric and not back.claims_tracefree
    assert back.grid == g
    assert np.array_equal(back.data, t.data)


def test_fld1_errors(tmp_path):
    g = Grid((4, 4, 4), "zero")
    f = ScalarField(g, np.ones(g.dims))
    path = tmp_path / "s.fld"
    write_field(path, f)
    with pytest.raises(DimMismatch):
        read_field(path, expect_kind="vector")
    blob = path.read_bytes()
    bad = tmp_path / "bad.fld"
    bad.write_bytes(b"NOPE" + blob[4:])
    with pytest.raises(BadMagic):
        read_field(bad)
    trunc = tmp_path / "trunc.fld"
    trunc.write_bytes(blob[:-16])
    with pytest.raises(TruncatedPayload):
        read_field(trunc)


def test_constraint_flags_validated():
    g = Grid((4, 4, 4), "zero")
    rng = np.random.default_rng(0)
    data = rng.standard_normal((3, 3) + g.dims)
    with pytest.raises(GridMismatch):
        TensorField(g, data, claims_symmetric=True)
    TensorField(g, ta.sym(data), claims_symmetric=True)
    TensorField(g, ta.dev(data), claims_tracefree=True)


def test_dofs_roundtrip():
    g = Grid((5, 4, 6), "zero")
    f = random_smooth_field(g, "vector", 6, 1)
    back = VectorField.from_dofs(g, f.dofs())
    assert np.array_equal(back.data, f.data)
