"""Cost model: analytic FLOP pricing, savings ratios, parameter counts."""

import numpy as np
import pytest

from sparsetrain.errors import ParameterError
from sparsetrain.flops import (count_parameters, flops_report, forward_flops,
                               savings_forward_only, savings_paired_sparse)
from sparsetrain.models import build_model
from sparsetrain.network import (Conv, Dense, Flatten, MaxPool, NetworkParams,
                                 NetworkSpec, Relu, forward)
from sparsetrain.tensor_ops import count_ops


def test_equal_cost_gives_three_quarters_savings():
    np.testing.assert_allclose(savings_paired_sparse(1.0, 1.0), 0.75)
    np.testing.assert_allclose(savings_forward_only(1.0, 1.0), 1.0)


def test_quarter_cost_gives_three_fold_savings():
    np.testing.assert_allclose(savings_paired_sparse(0.25, 1.0), 3.0)


@pytest.mark.parametrize("rho", [0.1, 0.25, 0.5, 0.75])
def test_uniform_density_closed_form(rho):
    # Interior layer cost scales with density squared, so the paired-run
    # speed-up reduces to 3 / (4 rho^2).
    np.testing.assert_allclose(savings_paired_sparse(rho ** 2, 1.0),
                               3.0 / (4.0 * rho ** 2), rtol=1e-12)


def test_headline_savings_value():
    np.testing.assert_allclose(savings_paired_sparse(0.0170, 1.0), 44.68,
                               rtol=0.05)


def test_forward_only_savings_capped_below_three_halves():
    for f_sparse in np.linspace(1e-6, 1.0, 50):
        assert savings_forward_only(f_sparse, 1.0) < 1.5


def test_zero_sparse_cost_warns_and_returns_inf():
    with pytest.warns(UserWarning):
        assert savings_paired_sparse(0.0, 1.0) == np.inf


def test_nonpositive_dense_cost_rejected():
    with pytest.raises(ParameterError):
        savings_paired_sparse(0.5, 0.0)
    with pytest.raises(ParameterError):
        savings_forward_only(0.5, -1.0)
    with pytest.raises(ParameterError):
        savings_paired_sparse(-0.1, 1.0)


def test_all_active_mask_costs_the_dense_amount():
    spec = build_model("mlp_small", (12,), 4)
    ones = np.ones(spec.num_channels, dtype=np.uint8)
    assert forward_flops(spec, ones) == forward_flops(spec, None)


def test_empty_mask_costs_nothing():
    spec = build_model("mlp_tiny", (2,), 2)
    zeros = np.zeros(spec.num_channels, dtype=np.uint8)
    assert forward_flops(spec, zeros) == 0.0


def test_deep_uniform_stack_ratio_approaches_density_squared():
    width, depth, rho = 16, 20, 0.5
    layers = []
    for _ in range(depth):
        layers.append(Dense(width))
        layers.append(Relu())
    spec = NetworkSpec((width,), layers + [Dense(4)], 4)
    mask = np.zeros(spec.num_channels, dtype=np.uint8)
    for start, count in (spec.channel_range(i) for i in spec.maskable_layers):
        mask[start:start + int(rho * count)] = 1
    ratio = forward_flops(spec, mask) / forward_flops(spec, None)
    # boundary layers only lose one factor of rho, so the ratio sits just
    # above rho^2 and tightens as depth grows
    assert rho ** 2 < ratio < 0.28


def test_dense_flops_formula_by_hand():
    spec = NetworkSpec((2, 6, 6),
                       [Conv(4), Relu(), MaxPool(), Flatten(), Dense(3)], 3)
    conv = 2 * 2 * 9 * 4 * 6 * 6
    dense = 2 * (4 * 3 * 3) * 3
    assert forward_flops(spec, None) == conv + dense


def test_forward_flops_agrees_with_measured_multiplies():
    # For a norm-free net the counter sees exactly one multiply per MAC plus
    # the softmax's 2k per sample, and FLOPs price each MAC at 2.
    spec = NetworkSpec((2, 6, 6),
                       [Conv(4), Relu(), MaxPool(), Flatten(), Dense(3)], 3)
    params = NetworkParams.init(spec, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    batch = 3
    x = rng.normal(size=(batch, 2, 6, 6))
    y = rng.integers(0, 3, batch)
    for seed in range(5):
        draw = np.random.default_rng(seed).uniform(size=spec.num_channels)
        mask = (draw < 0.6).astype(np.uint8)
        with count_ops() as counter:
            forward(spec, params, mask, x, y, want_cache=False)
        analytic = batch * forward_flops(spec, mask) / 2 + 2 * batch * spec.classes
        assert counter.multiplies == analytic


def test_flops_report_fields():
    spec = build_model("mlp_tiny", (2,), 2)
    mask = np.zeros(spec.num_channels, dtype=np.uint8)
    mask[::2] = 1
    report = flops_report(spec, mask, measured_multiplies=123)
    assert report.dense_flops == forward_flops(spec, None)
    assert report.sparse_flops == forward_flops(spec, mask)
    np.testing.assert_allclose(report.flops_ratio,
                               report.sparse_flops / report.dense_flops)
    np.testing.assert_allclose(
        report.savings,
        savings_paired_sparse(report.sparse_flops, report.dense_flops))
    np.testing.assert_allclose(
        report.savings_forward_only,
        savings_forward_only(report.sparse_flops, report.dense_flops))
    assert report.active_parameters == count_parameters(spec, mask)
    assert report.total_parameters == count_parameters(spec, None)
    d = report.to_dict()
    assert d["measured_multiplies"] == 123
    assert set(d) == {"dense_flops", "sparse_flops", "flops_ratio", "savings",
                      "savings_forward_only", "active_parameters",
                      "total_parameters", "measured_multiplies"}


def test_flops_report_all_pruned_does_not_warn():
    spec = build_model("mlp_tiny", (2,), 2)
    zeros = np.zeros(spec.num_channels, dtype=np.uint8)
    import warnings as _w
    with _w.catch_warnings():
        _w.simplefilter("error")
        report = flops_report(spec, zeros)
    assert report.savings == np.inf


def test_count_parameters_with_and_without_mask():
    spec = NetworkSpec((3,), [Dense(4, norm=True), Relu(), Dense(2)], 2)
    dense_total = (3 * 4 + 4) + 2 * 4 + (4 * 2 + 2)
    assert count_parameters(spec, None) == dense_total
    mask = np.array([1, 1, 0, 0], dtype=np.uint8)
    kept = (3 * 2 + 2) + 2 * 2 + (2 * 2 + 2)
    assert count_parameters(spec, mask) == kept


def test_count_parameters_conv_kernels():
    spec = NetworkSpec((2, 6, 6),
                       [Conv(4), Relu(), MaxPool(), Flatten(), Dense(3)], 3)
    assert count_parameters(spec, None) == (2 * 4 * 9 + 4) + (4 * 9 * 3 + 3)
    mask = np.array([1, 0, 1, 0], dtype=np.uint8)
    kept = (2 * 2 * 9 + 2) + (2 * 9 * 3 + 3)
    assert count_parameters(spec, mask) == kept
