import math

import numpy as np
import pytest

from discop.grid import Grid
from discop.io import FormatError, dataset_from_bytes, dataset_to_bytes
from discop.measures import (
    BoxWaveMeasure, PeriodicGRFMeasure, ShiftedSineMeasure, ShockTubeMeasure,
    generate_dataset, grf_eigenvalues, measure_from_dict, measure_to_dict,
    periodized_kernel, sample_box, sample_grf, sample_shocktube, sample_stream,
    shocktube_from_z,
)


def test_box_degenerate_ranges():
    spec = BoxWaveMeasure((0.3, 0.3), (0.1, 0.1), (0.2, 0.2))
    p = sample_box(spec, sample_stream(1, 0))
    assert (p.h, p.w, p.xi) == (0.3, 0.1, 0.2)


def test_box_mean_height_clt():
    spec = BoxWaveMeasure()
    rng = sample_stream(7, 0)
    h = np.array([sample_box(spec, rng).h for _ in range(100_000)])
    sigma = 0.6 / math.sqrt(12)
    assert abs(h.mean() - 0.5) < 3 * sigma / math.sqrt(1e5)
    assert h.min() >= 0.2 and h.max() <= 0.8


def test_default_box_ranges():
    spec = BoxWaveMeasure()
    assert (spec.h_range, spec.w_range, spec.xi_range, spec.period) == \
        ((0.2, 0.8), (0.05, 0.3), (0.0, 0.5), 1.0)
    assert spec.speed * spec.t_final == 0.125


def test_streams_independent_of_order():
    a = sample_stream(5, 3).standard_normal(4)
    sample_stream(5, 2).standard_normal(10)
    assert np.array_equal(a, sample_stream(5, 3).standard_normal(4))
    assert not np.array_equal(a, sample_stream(5, 4).standard_normal(4))


def test_grf_long_length_scale_is_constant():
    spec = PeriodicGRFMeasure(length_scale=1e3)
    g = Grid(64, 1.0)
    lam, _ = grf_eigenvalues(spec, g)
    assert np.all(lam[1:] / g.n < 1e-8)
    u = sample_grf(spec, sample_stream(0, 0), g).values
    assert np.std(u) < 1e-3 * max(1e-12, abs(u.mean())) + 1e-4


def test_grf_variance_and_covariance():
    spec = PeriodicGRFMeasure()
    g = Grid(1024, 1.0)
    lam, clamped = grf_eigenvalues(spec, g)
    rng = sample_stream(11, 0)
    u = np.array([sample_grf(spec, rng, g, lam).values for _ in range(10_000)])
    var = np.mean(u ** 2)
    assert abs(var - lam.sum() / g.n) < 0.05 * lam.sum() / g.n
    assert abs(lam.sum() / g.n - 1.0) < 1e-12
    lag = 16
    cov = np.mean(u * np.roll(u, -lag, axis=1))
    ref = periodized_kernel(np.array([lag * g.dx]), 0.06, 1.0)[0]
    assert abs(cov - ref) < 0.05 * ref


def test_periodized_kernel_oracle():
    # direct sum over images
    x = np.array([0.0, 0.3, 0.5, 0.9])
    ref = sum(np.exp(-(x + m) ** 2 / (2 * 0.4 ** 2)) for m in range(-20, 21))
    ref0 = sum(math.exp(-m ** 2 / (2 * 0.4 ** 2)) for m in range(-20, 21))
    assert np.allclose(periodized_kernel(x, 0.4, 1.0), ref / ref0, atol=1e-14)


def test_shocktube_affine_maps():
    assert shocktube_from_z([0.5] * 6) == ((0.75, 0.5, 2.5), (0.4, 0.0, 0.375), 0.0)
    left, right, x0 = shocktube_from_z([1.0] * 6)
    assert np.allclose(left, (1.2, 1.0, 4.1)) and np.allclose(right, (0.7, 0.0, 0.7))
    assert x0 == 0.5
    g = Grid(64, 10.0, -5.0).cell_centered()
    rng = sample_stream(0, 0)
    for _ in range(50):
        s = sample_shocktube(ShockTubeMeasure(), rng, g)
        assert s.rho.min() > 0 and s.pressure().min() > 0


def test_empty_dataset():
    ds = generate_dataset(BoxWaveMeasure(), 0, 64, seed=1)
    assert len(ds) == 0 and ds.manifest["n_samples"] == 0
    assert dataset_from_bytes(dataset_to_bytes(ds)).inputs.shape == (0, 1, 64)


@pytest.mark.parametrize("measure,n", [
    (BoxWaveMeasure(), 256), (ShiftedSineMeasure(), 64),
    (PeriodicGRFMeasure(), 64), (ShockTubeMeasure(t_final=0.2), 64)])
def test_determinism_and_round_trip(measure, n):
    a = generate_dataset(measure, 3, n, seed=42)
    b = generate_dataset(measure, 3, n, seed=42)
    assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.outputs, b.outputs)
    # order independence: samples 1..2 alone match
    c = generate_dataset(measure, 2, n, seed=42, start=1)
    assert np.array_equal(a.outputs[1:], c.outputs)
    raw = dataset_to_bytes(a)
    back = dataset_from_bytes(raw)
    assert dataset_to_bytes(back) == raw
    assert back.grid == a.grid and measure_from_dict(back.manifest["measure"]) == measure


def test_box_outputs_are_exact_translates():
    ds = generate_dataset(BoxWaveMeasure(), 20, 2048, seed=3)
    # 0.125 * 2048 = 256 cells
    assert np.array_equal(ds.outputs, np.roll(ds.inputs[:, 0], 256, axis=1))


def test_grf_dataset_manifest():
    ds = generate_dataset(PeriodicGRFMeasure(), 2, 32, seed=0)
    assert ds.manifest["solver"]["fine_n"] == 128
    assert "clamped_eigenvalues" in ds.manifest


def test_format_errors():
    raw = dataset_to_bytes(generate_dataset(BoxWaveMeasure(), 1, 16, seed=0))
    with pytest.raises(FormatError):
        dataset_from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        dataset_from_bytes(raw[:-3])


def test_measure_dict_round_trip_and_validation():
    spec = PeriodicGRFMeasure(length_scale=0.1)
    assert measure_from_dict(measure_to_dict(spec)) == spec
    with pytest.raises(ValueError):
        measure_from_dict({"kind": "box", "bogus": 1})
    with pytest.raises(ValueError):
        measure_from_dict({"kind": "box", "h_range": [0.8, 0.2]})
