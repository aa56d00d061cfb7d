import math

import numpy as np
import pytest
from scipy import integrate

from flowcrypt import (
    ActNorm,
    AffineCoupling,
    FlowModel,
    InvalidArgumentError,
    InvertibleLinear,
    actnorm_init,
    bits_per_dim,
    build_default_flow,
    dequantize,
    dequantize_inverse,
    flow_forward,
    flow_inverse,
    layer_forward,
    layer_inverse,
    log_prob,
)
from flowcrypt.errors import DegenerateDataError

from conftest import numerical_jacobian


def diag_linear(diag_entries) -> InvertibleLinear:
    d = np.asarray(diag_entries, dtype=float)
    m = d.size
    return InvertibleLinear(
        m,
        perm=np.arange(m),
        sign=np.sign(d),
        lower=np.zeros((m, m)),
        upper=np.zeros((m, m)),
        log_diag=np.log(np.abs(d)),
    )


def random_coupling(dim, seed, hidden=16, head_scale=1.0):
    rng = np.random.default_rng(seed)
    mask = np.arange(dim) < dim // 2
    return AffineCoupling.create(dim, mask, hidden, rng, head_scale=head_scale)


# --- dequantization ---------------------------------------------------------

def test_dequantize_midpoint():
    y, _ = dequantize(np.array([128.0]), 0.0)
    assert y[0] == pytest.approx(0.0, abs=1e-12)


def test_dequantize_zero_with_alpha():
    y, _ = dequantize(np.array([0.0]), 0.05)
    assert y[0] == pytest.approx(math.log(0.05 / 0.95), abs=1e-6)  # -2.944439


def test_dequantize_roundtrip_all_levels():
    x = np.arange(256, dtype=float)
    for alpha in (0.01, 0.05, 0.3):
        y, _ = dequantize(x, alpha)
        back = dequantize_inverse(y, alpha)
        assert np.max(np.abs(back - x)) < 1e-9
    # alpha=0 is fine away from the x=0 singularity
    y, _ = dequantize(np.arange(1, 256, dtype=float), 0.0)
    assert np.all(np.isfinite(y))
    with pytest.raises(InvalidArgumentError):
        dequantize(np.array([0.0]), 0.0)


def test_dequantize_logdet_matches_numeric():
    x = np.array([3.0, 77.0, 201.0])
    alpha = 0.05
    _, ld = dequantize(x, alpha)
    jac = numerical_jacobian(lambda v: dequantize(v, alpha)[0], x)
    _, num_ld = np.linalg.slogdet(jac)
    assert ld == pytest.approx(num_ld, rel=1e-6)


def test_dequantize_bad_alpha():
    with pytest.raises(InvalidArgumentError):
        dequantize(np.array([1.0]), 0.5)
    with pytest.raises(InvalidArgumentError):
        dequantize(np.array([1.0]), -0.1)


def test_dequantize_out_of_range():
    with pytest.raises(InvalidArgumentError):
        dequantize(np.array([256.0]), 0.0)


# --- actnorm ----------------------------------------------------------------

def test_actnorm_init_standardizes():
    rng = np.random.default_rng(0)
    batch = 3.0 + 2.0 * rng.standard_normal((500, 4))
    layer = actnorm_init(ActNorm(4), batch)
    out, _ = layer.forward(batch)
    assert np.max(np.abs(out.mean(axis=0))) < 1e-6
    assert np.max(np.abs(out.std(axis=0) - 1.0)) < 1e-6


def test_actnorm_init_on_standardized_batch():
    rng = np.random.default_rng(1)
    batch = rng.standard_normal((4000, 3))
    batch = (batch - batch.mean(axis=0)) / batch.std(axis=0)
    layer = actnorm_init(ActNorm(3), batch)
    assert np.allclose(layer.scale, 1.0, atol=1e-9)
    assert np.allclose(layer.bias, 0.0, atol=1e-9)


def test_actnorm_double_init_rejected():
    layer = actnorm_init(ActNorm(2), np.random.default_rng(0).standard_normal((100, 2)))
    with pytest.raises(InvalidArgumentError):
        actnorm_init(layer, np.random.default_rng(1).standard_normal((100, 2)))


def test_actnorm_zero_variance_dim_named():
    batch = np.ones((50, 3))
    batch[:, 0] = np.arange(50)
    with pytest.raises(DegenerateDataError, match="dimension 1"):
        actnorm_init(ActNorm(3), batch)


def test_actnorm_identity_params():
    layer = ActNorm(3, scale=np.ones(3), bias=np.zeros(3), initialized=True)
    x = np.array([0.5, -1.0, 2.0])
    y, ld = layer_forward(layer, x)
    assert np.allclose(y, x)
    assert ld == 0.0


# --- per-layer forward / inverse / log-det ----------------------------------

def test_linear_diag_logdet():
    layer = diag_linear([2.0, 3.0])
    _, ld = layer_forward(layer, np.array([1.0, 1.0]))
    assert ld == pytest.approx(math.log(6.0), abs=1e-12)  # 1.791759


def test_linear_diag_inverse():
    layer = diag_linear([2.0, 3.0])
    x = layer_inverse(layer, np.array([2.0, 3.0]))
    assert np.allclose(x, [1.0, 1.0], atol=1e-12)


def test_linear_from_rotation_initial_logdet_zero():
    for seed in range(5):
        layer = InvertibleLinear.from_rotation(5, np.random.default_rng(seed))
        _, ld = layer_forward(layer, np.zeros(5))
        assert abs(ld) < 1e-9
        w = layer.weight()
        assert abs(np.linalg.det(w) - 1.0) < 1e-8


def test_coupling_logdet_matches_numeric_jacobian():
    layer = random_coupling(4, seed=3)
    x = np.random.default_rng(9).standard_normal(4)
    _, ld = layer_forward(layer, x)
    jac = numerical_jacobian(lambda v: layer_forward(layer, v)[0], x)
    _, num_ld = np.linalg.slogdet(jac)
    assert ld == pytest.approx(num_ld, rel=1e-5)


def test_coupling_masked_coordinates_pass_through():
    layer = random_coupling(6, seed=4)
    x = np.random.default_rng(10).standard_normal(6)
    y, _ = layer_forward(layer, x)
    assert np.array_equal(y[layer.mask], x[layer.mask])


def test_coupling_roundtrip_sweep():
    layer = random_coupling(5, seed=5)
    ys = np.random.default_rng(11).standard_normal((1000, 5))
    xs = layer.inverse(ys)
    back, _ = layer.forward(xs)
    assert np.max(np.abs(back - ys)) < 1e-9


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_layer_inverse_roundtrip_all_types(seed):
    rng = np.random.default_rng(seed)
    layers = [
        ActNorm(4, scale=rng.uniform(0.5, 2.0, 4), bias=rng.standard_normal(4), initialized=True),
        InvertibleLinear.from_rotation(4, rng),
        random_coupling(4, seed=seed + 100),
    ]
    x = rng.standard_normal(4)
    for layer in layers:
        y, _ = layer_forward(layer, x)
        back = layer_inverse(layer, y)
        assert np.max(np.abs(back - x)) < 1e-9


# --- flow composition -------------------------------------------------------

def test_empty_stack_is_identity():
    model = FlowModel(3, [])
    s = np.array([0.3, -0.7, 1.1])
    lv = flow_forward(model, s)
    assert np.array_equal(lv.values, s)
    assert lv.log_det == 0.0
    assert np.array_equal(flow_inverse(model, s), s)


def test_scalar_flow_multiply_by_two():
    model = FlowModel(1, [diag_linear([2.0])])
    lv = flow_forward(model, np.array([3.0]))
    assert lv.values[0] == pytest.approx(6.0)
    assert lv.log_det == pytest.approx(math.log(2.0))
    assert flow_inverse(model, np.array([6.0]))[0] == pytest.approx(3.0)


def test_flow_roundtrip_random_models():
    rng = np.random.default_rng(12)
    for m in (2, 4, 8):
        model = build_default_flow(m, blocks=3, hidden=16, rng=rng, head_scale=1.0)
        model.initialize_actnorms(rng.standard_normal((256, m)))
        xs = rng.standard_normal((100, m))
        lv = flow_forward(model, xs)
        back = flow_inverse(model, lv.values)
        assert np.max(np.abs(back - xs)) < 1e-6


def test_flow_logdet_matches_numeric_jacobian():
    rng = np.random.default_rng(13)
    model = build_default_flow(4, blocks=3, hidden=16, rng=rng, head_scale=0.8)
    model.initialize_actnorms(rng.standard_normal((256, 4)))
    x = rng.standard_normal(4)
    lv = flow_forward(model, x)
    jac = numerical_jacobian(lambda v: flow_forward(model, v).values, x)
    _, num_ld = np.linalg.slogdet(jac)
    assert lv.log_det == pytest.approx(num_ld, rel=1e-4)


def test_non_finite_input_rejected():
    model = FlowModel(2, [])
    with pytest.raises(InvalidArgumentError):
        flow_forward(model, np.array([np.nan, 0.0]))


# --- log_prob / bits per dim -------------------------------------------------

def test_log_prob_identity_origin():
    model = FlowModel(2, [])
    assert log_prob(model, np.zeros(2)) == pytest.approx(-math.log(2 * math.pi), abs=1e-12)


def test_log_prob_identity_matches_analytic():
    model = FlowModel(3, [])
    rng = np.random.default_rng(14)
    for _ in range(20):
        s = rng.standard_normal(3)
        expected = -1.5 * math.log(2 * math.pi) - 0.5 * float(s @ s)
        assert log_prob(model, s) == pytest.approx(expected, abs=1e-12)


def test_log_prob_change_of_variables_1d():
    model = FlowModel(1, [diag_linear([2.0])])
    for s in (-1.3, 0.0, 0.8):
        z = 2.0 * s
        expected = (-0.5 * math.log(2 * math.pi) - 0.5 * z * z) + math.log(2.0)
        assert log_prob(model, np.array([s])) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize(
    "model_factory",
    [
        lambda: FlowModel(1, []),
        lambda: FlowModel(1, [diag_linear([2.0])]),
        lambda: FlowModel(
            1, [ActNorm(1, scale=np.array([0.7]), bias=np.array([0.3]), initialized=True)]
        ),
    ],
)
def test_density_normalizes_1d(model_factory):
    model = model_factory()
    val, _ = integrate.quad(lambda t: math.exp(log_prob(model, np.array([t]))), -8, 8, limit=200)
    assert val == pytest.approx(1.0, abs=1e-4)


def test_bits_per_dim_gaussian_term():
    # Identity flow in 1-D, sample at the alpha=0 midpoint: the Gaussian
    # term alone is (0.5 log 2pi)/ln 2 bits before the dequantization
    # correction.
    model = FlowModel(1, [])
    y, ld = dequantize(np.array([128.0]), 0.0)
    gauss_bits = -(log_prob(model, y)) / math.log(2.0)
    assert gauss_bits == pytest.approx(0.5 * math.log(2 * math.pi) / math.log(2.0), abs=1e-9)
    total = bits_per_dim(model, np.array([[128.0]]), 0.0)
    assert total == pytest.approx(gauss_bits - ld / math.log(2.0), abs=1e-9)


def test_bits_per_dim_product_model_invariant():
    # Doubling the dimension with the same per-dim model leaves bpd fixed.
    one = FlowModel(1, [diag_linear([2.0])])
    two = FlowModel(2, [diag_linear([2.0, 2.0])])
    data1 = np.array([[100.0], [37.0]])
    data2 = np.array([[100.0, 100.0], [37.0, 37.0]])
    assert bits_per_dim(one, data1, 0.05) == pytest.approx(bits_per_dim(two, data2, 0.05), rel=1e-12)


def test_bits_per_dim_empty_rejected():
    with pytest.raises(InvalidArgumentError):
        bits_per_dim(FlowModel(1, []), np.empty((0, 1)), 0.05)


def test_uninitialized_actnorm_forward_rejected():
    model = build_default_flow(2, blocks=1, rng=0)
    with pytest.raises(InvalidArgumentError):
        flow_forward(model, np.zeros(2))
