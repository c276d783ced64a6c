import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointpe.encoders import (
    ENCODER_KINDS,
    Encoder,
    build_encoder,
    encode_impulse,
    encode_sinc,
    eval_product_term,
    eval_rotated_terms,
    expand_frequency_grid,
    product_vs_rotated_basis,
    reconstruct_sinc,
    rff_from_matrix,
    rotate_product_term,
    sinc_grid,
    sinc_signal,
)
from pointpe.errors import ConfigError, DataError, ResourceLimitError
from pointpe.pointcloud import PointCloud

coord = st.floats(-2, 2, allow_nan=False)
vec3 = st.tuples(coord, coord, coord).map(np.array)


def _cloud(n, seed=0):
    return np.random.default_rng(seed).uniform(-1, 1, size=(n, 3))


# build -------------------------------------------------------------------------


def test_rff_shapes():
    assert build_encoder("rff", 3, 1024, 0.09, 0).params["W"].shape == (512, 3)
    assert build_encoder("rff", 3, 256, 0.9, 0).params["W"].shape == (128, 3)


def test_rff_odd_dim_rejected():
    with pytest.raises(ConfigError):
        build_encoder("rff", 3, 1025, 1.0, 0)


@pytest.mark.parametrize("kind", ["impulse", "sinc1d"])
def test_scalar_encoders_need_1d(kind):
    with pytest.raises(ConfigError):
        build_encoder(kind, 3, 16, 1.0, 0)


def test_bad_scale_and_kind():
    with pytest.raises(ConfigError):
        build_encoder("rff", 3, 8, 0.0, 0)
    with pytest.raises(ConfigError):
        build_encoder("fourier", 3, 8, 1.0, 0)


def test_rff_weight_std():
    W = build_encoder("rff", 3, 2 * 5000, 0.7, 4).params["W"]
    assert W.size >= 10**4
    assert abs(W.std() / 0.7 - 1) < 0.05
    assert abs(W.mean()) < 0.05


@pytest.mark.parametrize(
    "kind,dim_in,dim_out,scale",
    [
        ("rff", 3, 64, 0.5),
        ("relu_mlp", 3, 64, 0.1),
        ("rff_attention", 3, 64, 0.9),
        ("sinusoid_grid", 3, 64, 4),
        ("gaussian_pe", 3, 64, 0.5),
        ("sinc1d", 1, 16, 1),
        ("impulse", 1, 16, 1),
    ],
)
def test_determinism_and_serialization(kind, dim_in, dim_out, scale):
    a = build_encoder(kind, dim_in, dim_out, scale, 9)
    b = Encoder.from_dict(a.to_dict())
    assert a.checksum() == b.checksum()
    assert set(a.to_dict()) == {"kind", "dim_in", "dim_out", "scale", "seed"}
    if a.params:
        assert a.checksum() != build_encoder(kind, dim_in, dim_out, scale, 10).checksum() or kind in ("sinc1d", "gaussian_pe")
    x = np.full(dim_in, 0.3)
    assert a.encode(x).tobytes() == b.encode(x).tobytes()
    assert a.encode(x).shape == (dim_out,)


def test_params_are_frozen():
    enc = build_encoder("rff", 3, 8, 1.0, 0)
    with pytest.raises(ValueError):
        enc.params["W"][0, 0] = 1.0


# rff ---------------------------------------------------------------------------


def test_rff_at_origin():
    enc = build_encoder("rff", 3, 64, 2.0, 1)
    g = enc.encode(np.zeros(3))
    np.testing.assert_array_equal(g[:32], 1.0)
    np.testing.assert_array_equal(g[32:], 0.0)


def test_rff_fixed_matrix():
    enc = rff_from_matrix([[math.pi, 0, 0]])
    np.testing.assert_allclose(enc.encode([0.5, 0, 0]), [0.0, 1.0], atol=1e-12)


def test_rff_dimension_mismatch():
    with pytest.raises(DataError):
        build_encoder("rff", 3, 8, 1.0, 0).encode([1.0, 2.0])


@settings(max_examples=50, deadline=None)
@given(vec3, vec3)
def test_rff_unit_energy_and_shift_kernel(x1, x2):
    enc = build_encoder("rff", 3, 256, 1.3, 2)
    g1, g2 = enc.encode(x1), enc.encode(x2)
    assert abs(g1 @ g1 - 128) < 1e-9
    W = enc.params["W"]
    assert abs(g1 @ g2 - np.cos(W @ (x1 - x2)).sum()) < 1e-9


# relu mlp ----------------------------------------------------------------------


def test_relu_mlp_homogeneity():
    enc = build_encoder("relu_mlp", 3, 32, 0.1, 3)
    s = 1.7
    scaled = Encoder(enc.kind, 3, 32, enc.scale, enc.seed, {k: v * s if k[0] == "W" else v for k, v in enc.params.items()})
    x = np.random.default_rng(0).uniform(-1, 1, 3)
    np.testing.assert_allclose(scaled.encode(x), s**3 * enc.encode(x), rtol=1e-12, atol=1e-15)


def test_relu_mlp_widths():
    enc = build_encoder("relu_mlp", 3, 1024, 0.1, 0)
    assert [enc.params[f"W{i}"].shape for i in range(3)] == [(64, 3), (128, 64), (1024, 128)]
    assert not any(enc.params[f"b{i}"].any() for i in range(3))


# clouds ------------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["rff", "relu_mlp", "rff_attention", "gaussian_pe", "sinusoid_grid"])
def test_encode_cloud_permutes_rows(kind):
    enc = build_encoder(kind, 3, 64, 0.9 if kind != "sinusoid_grid" else 4, 5)
    pts = _cloud(8, 1)
    perm = np.random.default_rng(2).permutation(8)
    a = enc.encode_cloud(PointCloud(pts))
    b = enc.encode_cloud(PointCloud(pts[perm]))
    assert b.tobytes() == a[perm].tobytes()


def test_single_point_cloud_matches_encode():
    enc = build_encoder("rff", 3, 64, 0.9, 5)
    x = _cloud(1)[0]
    np.testing.assert_array_equal(enc.encode_cloud(PointCloud(x[None])), enc.encode(x)[None])


def test_rff_rows_match_encode():
    enc = build_encoder("rff", 3, 64, 0.9, 5)
    pts = _cloud(20)
    rows = enc.encode_points(pts)
    np.testing.assert_allclose(rows, np.stack([enc.encode(p) for p in pts]), atol=1e-14)


def test_attention_is_not_pointwise():
    enc = build_encoder("rff_attention", 3, 64, 0.9, 5)
    pts = _cloud(8)
    full = enc.encode_points(pts)
    assert full.shape == (8, 64)
    assert not np.allclose(full[0], enc.encode(pts[0]))


def test_attention_width_rule():
    with pytest.raises(ConfigError):
        build_encoder("rff_attention", 3, 100, 0.9, 0)
    enc = build_encoder("rff_attention", 3, 1024, 0.9, 0)
    assert enc.params["W"].shape == (128, 3)
    assert enc.params["q0"].shape == (256, 256)


# impulse -----------------------------------------------------------------------


def test_impulse_one_hot_and_additive():
    np.testing.assert_array_equal(encode_impulse([0.5], 10), np.eye(10)[5])
    assert encode_impulse([0.31, 0.31], 10)[3] == 2
    h = encode_impulse(np.random.default_rng(0).uniform(0.01, 0.99, 50), 20)
    assert h.sum() == 50


def test_impulse_crossing_gap_is_sqrt2():
    G = 10
    base = encode_impulse([0.55], G)
    for x in (0.61, 0.71, 0.95):
        assert abs(np.linalg.norm(encode_impulse([x], G) - base) - math.sqrt(2)) < 1e-15


def test_impulse_domain():
    with pytest.raises(DataError):
        encode_impulse([0.0], 10)
    with pytest.raises(DataError):
        encode_impulse([1.2], 10)


def test_impulse_encoder_rows():
    enc = build_encoder("impulse", 1, 10, 1.0, 0)
    np.testing.assert_array_equal(enc.encode([0.5]), np.eye(10)[5])


# sinc --------------------------------------------------------------------------


def test_sinc_grid_spacing():
    u = sinc_grid(16)
    assert np.all(np.diff(u) > 0)
    assert np.ptp(np.diff(u)) < 1e-12


def test_sinc_node_is_one_hot():
    K = 16
    coeffs = encode_sinc([sinc_grid(K)[5]], K)
    np.testing.assert_allclose(coeffs, np.eye(K)[5], atol=1e-15)


def test_sinc_reconstruction_on_grid():
    K = 16
    pts = sinc_grid(K)[[2, 7, 11]]
    t = np.random.default_rng(0).uniform(0, 1, 100)
    np.testing.assert_allclose(reconstruct_sinc(encode_sinc(pts, K), t), sinc_signal(pts, K, t), atol=1e-6)


def test_sinc_shift_grows_then_saturates():
    K = 16
    base = encode_sinc([0.5], K)
    deltas = [0.001, 0.002, 0.005, 0.01, 0.02]
    gaps = [np.linalg.norm(encode_sinc([0.5 + d], K) - base) for d in deltas]
    assert all(a < b for a, b in zip(gaps, gaps[1:]))
    far = [np.linalg.norm(encode_sinc([0.5 + d], K) - base) for d in (0.3, 0.35, 0.4)]
    # far apart the two sinc bumps barely overlap: gap ~ sqrt(2) * ||bump||
    assert np.ptp(far) / np.mean(far) < 0.15


def test_sinc_encoder_matches_function():
    enc = build_encoder("sinc1d", 1, 16, 1.0, 0)
    np.testing.assert_allclose(enc.encode([0.3]), encode_sinc([0.3], 16), atol=1e-15)


# frequency grid ----------------------------------------------------------------


def test_grid_1d():
    g = expand_frequency_grid(1, 4)
    assert len(g) == 8
    assert sorted(g.freqs[~g.is_sin, 0]) == [0, 1, 2, 3]
    assert sorted(g.freqs[g.is_sin, 0]) == [0, 1, 2, 3]


def test_grid_2d_count():
    g = expand_frequency_grid(2, 2)
    assert len(g) == 16
    # cos and sin over i1 in {0,1} and +-i2 in {0,1}
    assert {tuple(f) for f in g.freqs} == {(0, 0), (0, 1), (0, -1), (1, 0), (1, 1), (1, -1)}


def test_grid_cap():
    with pytest.raises(ResourceLimitError):
        expand_frequency_grid(3, 64, cap=10**5)
    assert len(expand_frequency_grid(3, 8)) == 16**3


def test_sinusoid_encoder_subsamples_grid():
    enc = build_encoder("sinusoid_grid", 3, 100, 3, 0)
    grid = expand_frequency_grid(3, 3)
    rows = {(tuple(f), s) for f, s in zip(grid.freqs.tolist(), grid.is_sin.tolist())}
    picked = [(tuple(f), s) for f, s in zip(enc.params["freqs"].astype(int).tolist(), enc.params["is_sin"].tolist())]
    # zero components make +-0 sign patterns coincide, so the grid repeats terms
    assert len(picked) == 100 and set(picked) <= rows


# trig identities ---------------------------------------------------------------


def test_product_vs_rotated_examples():
    a, b = product_vs_rotated_basis(0.3, 0.7, 2, 5)
    assert abs(a - b) < 1e-12
    assert product_vs_rotated_basis(1.1, -0.4, 0, 0) == (1.0, 1.0)


def test_product_vs_rotated_random():
    rng = np.random.default_rng(0)
    diffs = []
    for _ in range(1000):
        u, v = rng.uniform(-np.pi, np.pi, 2)
        i, j = rng.integers(0, 16, 2)
        a, b = product_vs_rotated_basis(u, v, int(i), int(j))
        diffs.append(abs(a - b))
    assert max(diffs) < 1e-12


@settings(max_examples=200, deadline=None)
@given(
    st.integers(1, 3).flatmap(
        lambda d: st.tuples(
            st.lists(st.booleans(), min_size=d, max_size=d),
            st.lists(st.integers(0, 7), min_size=d, max_size=d),
            st.lists(st.floats(-1, 1), min_size=d, max_size=d),
        )
    )
)
def test_rotated_expansion_equals_product(args):
    is_sin, freqs, x = args
    terms = rotate_product_term(is_sin, freqs)
    assert len(terms) == 2 ** (len(freqs) - 1)
    assert abs(eval_product_term(is_sin, freqs, x) - eval_rotated_terms(terms, x)) < 1e-12


def test_encoder_kinds_all_buildable():
    dims = {"impulse": (1, 8), "sinc1d": (1, 8), "gaussian_pe": (3, 27), "sinusoid_grid": (3, 16)}
    for kind in ENCODER_KINDS:
        d_in, d_out = dims.get(kind, (3, 64))
        enc = build_encoder(kind, d_in, d_out, 2.0, 0)
        assert enc.encode(np.full(d_in, 0.4)).shape == (d_out,)
