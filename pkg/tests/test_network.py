import numpy as np
import pytest

from snnguard.network import (LayerSpec, LinearModel, SnnModel, accuracy, cross_entropy, forward, init_model,
                              input_gradient, log_softmax, loss, margin_loss, per_sample_loss, smooth_proxy,
                              weight_gradients)
from snnguard.neurons import NeuronParams, SurrogateSpec, surrogate_slope
from snnguard.tensor import ShapeError, Tensor, backward

from conftest import numeric_gradient, relative_error


def small_model(rng, sizes=(6, 8, 5), classes=3, t_steps=4, gain=3.0, noise=0.0):
    return init_model(list(sizes), classes, rng, t_steps=t_steps, gain=gain,
                      neuron=NeuronParams(0.5, 1.0, 0.0, noise))


def test_zero_input_is_quiescent(rng):
    m = small_model(rng)
    rec = forward(m, np.zeros((3, 6)), record=True)
    assert all(np.all(s == 0) for s in rec.spikes())
    assert np.array_equal(rec.logits.data, np.zeros((3, 3)))


def test_single_neuron_spike_train():
    m = SnnModel([LayerSpec(Tensor([[0.8]]))], Tensor([[1.0]]), t_steps=4)
    rec = forward(m, np.array([[1.0]]), record=True)
    assert rec.spikes()[0].ravel().tolist() == [0.0, 1.0, 0.0, 1.0]


def test_identical_rows_give_identical_logits(rng):
    m = small_model(rng)
    x = rng.uniform(size=(1, 6))
    out = m.logits(np.vstack([x, x])).data
    assert np.array_equal(out[0], out[1])


def test_record_covers_layers_times_steps(rng):
    m = small_model(rng, sizes=(6, 8, 7, 5), t_steps=3)
    rec = forward(m, rng.uniform(size=(2, 6)), record=True)
    assert len(rec.states) == 3 and all(len(st.v) == 3 for st in rec.states)
    assert rec.logits.shape == (2, 3)


def test_shape_and_noise_errors(rng):
    m = small_model(rng)
    with pytest.raises(ShapeError):
        m.logits(np.zeros((2, 5)))
    with pytest.raises(ValueError):
        small_model(rng, noise=0.4).logits(np.zeros((2, 6)))
    with pytest.raises(ShapeError):
        SnnModel([LayerSpec(Tensor(np.ones((4, 3)))), LayerSpec(Tensor(np.ones((2, 5))))], Tensor(np.ones((2, 2))))
    with pytest.raises(ValueError):
        SnnModel([LayerSpec(Tensor(np.ones((4, 3))))], Tensor(np.ones((2, 4))), t_steps=0)


def test_determinism_and_batch_order_independence(rng):
    m = small_model(rng, noise=0.4)
    x = rng.uniform(size=(4, 6))
    a = forward(m, x, True, np.random.default_rng(5))
    b = forward(m, x, True, np.random.default_rng(5))
    assert a.logits.data.tobytes() == b.logits.data.tobytes()
    det = small_model(np.random.default_rng(3))
    perm = [2, 0, 3, 1]
    assert np.array_equal(det.logits(x).data[perm], det.logits(x[perm]).data)


def test_loss_examples(rng):
    assert loss(Tensor(np.zeros((2, 5))), [0, 3]).item() == pytest.approx(np.log(5), abs=1e-15)
    big = np.array([[60.0, 0.0, 0.0]])
    assert loss(Tensor(big), [0]).item() < 1e-25
    with pytest.raises(ValueError):
        loss(Tensor(np.zeros((1, 3))), [3])
    z = rng.normal(size=(4, 3))
    y = np.array([0, 2, 1, 2])
    zt = Tensor(z, requires_grad=True)
    backward(loss(zt, y))
    assert relative_error(zt.grad, numeric_gradient(lambda v: loss(Tensor(v), y).item(), z)) < 1e-6
    assert np.allclose(per_sample_loss(z, y).mean(), loss(Tensor(z), y).item())
    assert np.allclose(np.exp(log_softmax(z)).sum(axis=1), 1.0)
    assert cross_entropy is loss


def test_margin_loss_and_accuracy():
    z = Tensor([[1.0, 3.0, 0.0], [2.0, 0.0, 5.0]])
    assert margin_loss(z, [0, 0], [1, 2]).item() == pytest.approx((2.0 + 3.0) / 2)
    assert accuracy(z.data, [1, 0]) == 0.5


def test_dead_backward_path_gives_zero_gradient(rng):
    w = -np.abs(rng.normal(size=(8, 6))) - 0.1
    m = SnnModel([LayerSpec(Tensor(w)), LayerSpec(Tensor(rng.normal(size=(5, 8))))], Tensor(rng.normal(size=(3, 5))))
    g = input_gradient(m, rng.uniform(size=(4, 6)), [0, 1, 2, 0])
    assert np.array_equal(g, np.zeros((4, 6)))


def test_loss_scaling_scales_input_gradient(rng):
    m = small_model(rng)
    x, y = rng.uniform(size=(3, 6)), [0, 1, 2]
    g = input_gradient(m, x, y)
    g7 = input_gradient(m, x, y, loss_fn=lambda z, lab: loss(z, lab) * 7.0)
    assert np.max(np.abs(g7 - 7.0 * g)) < 1e-12


def test_smooth_proxy_input_gradient_matches_fd(rng):
    m = smooth_proxy(small_model(rng), 0.5)
    x, y = rng.uniform(size=(2, 6)), np.array([0, 2])
    g = input_gradient(m, x, y)
    fd = numeric_gradient(lambda v: loss(m.logits(v), y).item(), x)
    assert relative_error(g, fd) < 1e-6


def test_smooth_proxy_weight_gradients_match_fd(rng):
    m = smooth_proxy(small_model(rng, t_steps=3), 0.5)
    x, y = rng.uniform(size=(3, 6)), np.array([0, 2, 1])
    grads, _, _ = weight_gradients(m, x, y)
    arrays = m.parameter_arrays()
    for i, a in enumerate(arrays):
        def f(v, i=i):
            arr = list(arrays)
            arr[i] = v
            return loss(m.with_parameters(arr, trainable=False).logits(x), y).item()
        assert relative_error(grads[i], numeric_gradient(f, a)) < 1e-6


def test_smooth_proxy_limits(rng):
    m = small_model(rng)
    x = rng.uniform(size=(20, 6))
    rec = forward(m, x, record=True)
    gap = min(np.abs(p - 1.0).min() for p in rec.potentials())
    temp = gap / 25
    assert np.max(np.abs(smooth_proxy(m, temp).logits(x).data - rec.logits.data)) < 1e-6
    with pytest.raises(ValueError):
        smooth_proxy(m, 0.0)


def test_frozen_spikes_give_linear_readout_gradient(rng):
    # hidden potentials far outside the surrogate support: spikes act as fixed features
    w = np.repeat(np.array([[10.0], [-10.0], [10.0], [10.0], [-10.0]]), 4, axis=1)
    m = SnnModel([LayerSpec(Tensor(w))], Tensor(rng.normal(size=(3, 5))), t_steps=4)
    x = rng.uniform(0.5, 1.0, size=(6, 4))
    y = np.array([0, 1, 2, 0, 1, 2])
    grads, _, rec = weight_gradients(m, x, y)
    rate = rec.spikes()[0].mean(axis=0)
    z = rate @ m.readout.data.T
    p = np.exp(log_softmax(z))
    p[np.arange(6), y] -= 1
    assert np.max(np.abs(grads[1] - p.T @ rate / 6)) < 1e-12
    assert np.array_equal(grads[0], np.zeros_like(w))


def test_duplicated_batch_leaves_mean_gradient_unchanged(rng):
    m = small_model(rng)
    x, y = rng.uniform(size=(3, 6)), np.array([0, 1, 2])
    g1, _, _ = weight_gradients(m, x, y)
    g2, _, _ = weight_gradients(m, np.vstack([x, x]), np.concatenate([y, y]))
    for a, b in zip(g1, g2):
        assert np.max(np.abs(a - b)) < 1e-12


def test_single_step_gradient_matches_hand_chain_rule(rng):
    w, r = rng.normal(size=(5, 4)) * 2, rng.normal(size=(3, 5))
    m = SnnModel([LayerSpec(Tensor(w))], Tensor(r), t_steps=1)
    x, y = rng.uniform(size=(4, 4)), np.array([0, 1, 2, 1])
    grads, _, _ = weight_gradients(m, x, y)
    v = x @ w.T
    s = (v >= 1.0).astype(float)
    p = np.exp(log_softmax(s @ r.T))
    p[np.arange(4), y] -= 1
    p /= 4
    ds = p @ r
    dv = ds * surrogate_slope(v - 1.0, SurrogateSpec())
    assert np.max(np.abs(grads[0] - dv.T @ x)) < 1e-12
    assert np.max(np.abs(grads[1] - p.T @ s)) < 1e-12


def test_init_model_ranges(rng):
    m = init_model([16, 10, 4], 3, rng, gain=2.0)
    a = 2.0 * np.sqrt(3 / 16)
    assert np.all(np.abs(m.layers[0].weight.data) <= a)
    assert m.n_inputs == 16 and m.n_classes == 3
    assert m.readout.shape == (3, 4)


def test_membrane_decoder_reads_potentials(rng):
    m = small_model(rng).replace(decoder="membrane")
    x = rng.uniform(size=(2, 6))
    rec = forward(m, x, record=True)
    expect = rec.potentials()[-1].mean(axis=0) @ m.readout.data.T
    assert np.allclose(rec.logits.data, expect, atol=1e-14)


def test_linear_model_protocol(rng):
    w = rng.normal(size=(3, 4))
    lm = LinearModel(Tensor(w))
    x = rng.uniform(size=(2, 4))
    assert np.allclose(lm.logits(x).data, x @ w.T)
    assert lm.n_classes == 3 and not lm.stochastic
