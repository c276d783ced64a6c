import numpy as np
import pytest

from pointpe.classifier import TrainConfig
from pointpe.corruptions import CorruptionSpec
from pointpe.diagnostics import (
    distance_curve,
    encoding_illustration,
    curve_gap,
    frequency_law_check,
    grid_frequency_sums,
    grid_sum_variance,
    is_unimodal,
    linear_fit_r2,
    pooling_robustness_sweep,
    relu_layer_distance_curve,
    rff_expected_distance,
    scale_sweep,
    signed_frequency_sums,
    variance_standard_error,
)
from pointpe.encoders import ENCODER_KINDS, build_encoder
from pointpe.errors import ConfigError, DataError
from pointpe.pointcloud import make_synthetic_dataset
from pointpe.rng import child_seed

RFF = {"kind": "rff", "dim_in": 3, "dim_out": 4096}


# distance curves ----------------------------------------------------------------


def test_expected_distance_closed_form():
    assert rff_expected_distance(10, 1.0, 0.0) == 0.0
    assert rff_expected_distance(10, 1.0, 1e9) == pytest.approx(20.0)
    assert rff_expected_distance(10, 1.0, 1.0) == pytest.approx(20 * (1 - np.exp(-0.5)))


@pytest.mark.parametrize("kind", ENCODER_KINDS)
def test_zero_distance_is_exact(kind):
    dim_in = 1 if kind in ("impulse", "sinc1d") else 3
    dim_out = 27 if kind == "gaussian_pe" else 16
    spec = {"kind": kind, "dim_in": dim_in, "dim_out": dim_out, "scale": 4.0 if kind == "sinusoid_grid" else 0.5}
    rows = distance_curve(spec, [0.0, 0.05], draws=3, rng=0)
    assert rows[0].mean == 0.0 and rows[0].std == 0.0


def test_large_scale_saturates():
    rows = distance_curve({**RFF, "scale": 8.0}, [1.0, 2.0], draws=10, rng=1)
    a, b = rows[0].mean, rows[1].mean
    assert abs(a - b) <= 0.05 * b
    assert abs(b - 2 * 2048) <= 0.05 * 2 * 2048


def test_small_scale_is_quadratic():
    d = np.linspace(0.05, 0.5, 10)
    rows = distance_curve({**RFF, "scale": 0.1}, d, draws=20, rng=2)
    got = np.array([r.mean for r in rows])
    np.testing.assert_allclose(got, rff_expected_distance(2048, 0.1, d), rtol=0.02)
    # quadratic fit through the origin
    c = (got @ d**2) / (d**2 @ d**2)
    assert np.abs(got - c * d**2).max() < 0.02 * got.max()


def test_relu_layer_is_linear():
    d = np.linspace(0, 1, 11)
    rows = relu_layer_distance_curve(d, draws=20, rng=0)
    assert linear_fit_r2(d, [r.mean for r in rows]) >= 0.99


def test_distance_curve_deterministic_and_validated():
    a = distance_curve({**RFF, "scale": 0.5}, [0.3], draws=2, rng=7)
    b = distance_curve({**RFF, "scale": 0.5}, [0.3], draws=2, rng=7)
    assert a == b
    with pytest.raises(ConfigError):
        distance_curve(RFF, [0.1], draws=0)


# frequency laws ------------------------------------------------------------------


def test_variance_law_d3():
    r = frequency_law_check(3, 8, 100_000, rng=0)
    assert r.target == 64.0
    assert r.relative_error < 0.05


def test_triangle_law_d2():
    r = frequency_law_check(2, 8, 100_000, rng=0)
    assert abs(r.density_ratio - 2.0) <= 0.2


def test_shape_approaches_normal():
    d2 = frequency_law_check(2, 8, 200_000, rng=0)
    d4 = frequency_law_check(4, 8, 200_000, rng=0)
    assert d4.hist_max_dev < d2.hist_max_dev
    assert d4.ks_distance < d2.ks_distance


def test_frequency_check_validation():
    with pytest.raises(ConfigError):
        frequency_law_check(5, 8)
    with pytest.raises(ConfigError):
        frequency_law_check(3, 8, subsample=100)


def test_monte_carlo_rate():
    def se(n):
        return np.mean([frequency_law_check(3, 8, n, rng=child_seed(n, k)).variance_se for k in range(10)])

    assert abs(se(10_000) / se(40_000) - 2.0) <= 0.3 * 2.0


def test_standard_error_matches_spread():
    # the plug-in error agrees with the spread over many repetitions
    v = [signed_frequency_sums(3, 8, 2_000, rng=child_seed(1, k)).var(ddof=1) for k in range(400)]
    est = np.mean([variance_standard_error(signed_frequency_sums(3, 8, 2_000, rng=child_seed(2, k))) for k in range(20)])
    assert abs(np.std(v, ddof=1) / est - 1) < 0.15
    with pytest.raises(DataError):
        variance_standard_error([1.0, 2.0])


@pytest.mark.parametrize("dim,bandwidth", [(2, 4), (3, 5), (3, 2)])
def test_grid_variance_closed_form(dim, bandwidth):
    s = grid_frequency_sums(dim, bandwidth)
    assert s.mean() == pytest.approx(0.0, abs=1e-12)
    assert s.var() == pytest.approx(grid_sum_variance(dim, bandwidth))


# sweeps -------------------------------------------------------------------------


def test_is_unimodal():
    assert is_unimodal([1, 3, 5, 4, 2])
    assert is_unimodal([1, 3, 3, 2])
    assert not is_unimodal([1, 3, 2, 4, 1])
    assert not is_unimodal([5, 4, 3])
    assert is_unimodal([5, 4, 3], strict_interior=False)


@pytest.fixture(scope="module")
def tiny():
    return make_synthetic_dataset(6, 64, seed=1), make_synthetic_dataset(3, 64, seed=2)


def test_single_scale_sweep(tiny):
    rows = scale_sweep([0.5], *tiny, train_cfg=TrainConfig(epochs=2, batch_size=8), dim=64)
    assert len(rows) == 1 and rows[0].scale == 0.5
    assert 0 <= rows[0].test_acc <= 1
    with pytest.raises(DataError):
        scale_sweep([0.5], [], tiny[1])


def test_robustness_grid_shape(tiny):
    encs = {p: build_encoder("rff", 3, 32, 0.5, 0) for p in ("max", "mean")}
    specs = [CorruptionSpec("background", param=0.5, seed=1), CorruptionSpec("gaussian", param=0.05, seed=1)]
    cells = pooling_robustness_sweep(*tiny, encs, ["max", "mean"], specs, TrainConfig(epochs=2, batch_size=8))
    assert len(cells) == 2 * (len(specs) + 1)
    assert [c.corruption for c in cells[:3]] == ["clean", "background_outliers", "gaussian_noise"]
    assert all(0 <= c.error_rate <= 1 for c in cells)


# illustration -------------------------------------------------------------------


def test_illustration_columns():
    cols, rows = encoding_illustration([0.3, 0.6])
    assert cols == ["t", "impulse_clean", "sinc_clean"]
    assert len(rows) == 200 and len(rows[0]) == 3
    cols, _ = encoding_illustration([0.3], noise=[0.01, 0.02])
    assert cols[3:] == ["impulse_noise_0.01", "sinc_noise_0.01", "impulse_noise_0.02", "sinc_noise_0.02"]
    with pytest.raises(DataError):
        encoding_illustration([0.0, 0.5])


def _gaps(eps_list, column):
    cols, rows = encoding_illustration([0.3, 0.55, 0.8], noise=eps_list, grid=100)
    data = np.array(rows)
    clean = data[:, cols.index(f"{column}_clean")]
    return [curve_gap(clean, data[:, cols.index(f"{column}_noise_{e:g}")]) for e in eps_list]


def test_impulse_gap_independent_of_noise():
    # every offset moves each point into another bin of width 0.01
    gaps = _gaps([0.02, 0.05, 0.1], "impulse")
    assert max(gaps) - min(gaps) < 1e-12


def test_sinc_gap_grows_with_noise():
    gaps = _gaps([0.002, 0.005, 0.01, 0.02], "sinc")
    assert np.all(np.diff(gaps) > 0)
