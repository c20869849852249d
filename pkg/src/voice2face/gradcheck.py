"""Finite-difference verification of analytic gradients.

Used by the test suite and the `gradcheck` CLI command. Checks run in
float64; the relative-error measure is
|analytic - central| / max(|analytic|, |central|, 1e-8).
"""

from __future__ import annotations

import numpy as np

from voice2face.tensor import Tensor

DEFAULT_H = 1e-4
FLOOR = 1e-8


def finite_difference_check(f, point: Tensor, h: float = DEFAULT_H) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` maps a Tensor to a scalar Tensor and is re-evaluated from scratch
    on perturbed copies, so the analytic path never feeds the numeric one.
    """
    probe = Tensor(point.data.astype(np.float64).copy(), requires_grad=True)
    out = f(probe)
    probe.grad = None
    out.backward()
    analytic = probe.grad.copy()

    flat = probe.data.reshape(-1)
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(Tensor(probe.data.copy())).item()
        flat[i] = orig - h
        lo = f(Tensor(probe.data.copy())).item()
        flat[i] = orig
        numeric[i] = (hi - lo) / (2.0 * h)
    numeric = numeric.reshape(analytic.shape)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_parameter_gradients(make_loss, params, h: float = DEFAULT_H) -> float:
    """Max relative FD error over a list of parameter Tensors.

    `make_loss()` rebuilds the scalar loss from the current parameter
    values each call; parameters must be float64.
    """
    for p in params:
        p.grad = None
    loss = make_loss()
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = make_loss().item()
            flat[i] = orig - h
            lo = make_loss().item()
            flat[i] = orig
            num = (hi - lo) / (2.0 * h)
            a = ana.reshape(-1)[i]
            err = abs(a - num) / max(abs(a), abs(num), FLOOR)
            worst = max(worst, err)
    return worst


def kink_free(rng, shape, low=0.1, high=1.0):
    """Random values bounded away from zero, safe for ReLU-family FD checks."""
    mag = rng.uniform(low, high, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return (mag * sign).astype(np.float64)


def _clearing_shift(values, margin):
    """Smallest bias shift (from a fixed candidate ladder) that moves every
    value at least `margin` away from zero."""
    if float(np.min(np.abs(values))) > margin:
        return 0.0
    for k in range(1, 200):
        for sign in (1.0, -1.0):
            delta = sign * k * 2.0 * margin
            if float(np.min(np.abs(values + delta))) > margin:
                return delta
    raise RuntimeError("could not clear activation kinks")


def _clear_kinks(seq, input_arrays, margin):
    """Nudge per-channel biases so no ReLU/LReLU pre-activation on these
    inputs sits within `margin` of zero; returns the final outputs.

    Finite differences across a kink are meaningless; the h=1e-4 parameter
    perturbations move pre-activations by far less than the margin.
    """
    from voice2face.layers import Activation

    currents = [np.asarray(x) for x in input_arrays]
    layers = seq.layers
    for idx, layer in enumerate(layers):
        next_kinked = (idx + 1 < len(layers)
                       and isinstance(layers[idx + 1], Activation)
                       and layers[idx + 1].spec.kind in ("relu", "leaky_relu"))
        if next_kinked and hasattr(layer, "bias"):
            outs = [layer.forward(Tensor(c)).data for c in currents]
            for c in range(layer.bias.data.size):
                vals = np.concatenate([o[:, c].reshape(-1) for o in outs])
                layer.bias.data[c] += _clearing_shift(vals, margin)
        currents = [layer.forward(Tensor(c)).data for c in currents]
    return currents


def _mini_networks(seed=1234, margin=5e-3):
    """Miniature float64 nets (8x8 images, handfuls of channels) plus fixed
    inputs for the objective-level checks, with kink-free activations."""
    in_rng = np.random.default_rng(777)
    real = in_rng.normal(size=(2, 3, 8, 8))
    fake = in_rng.normal(size=(2, 3, 8, 8))
    emb = in_rng.normal(size=(2, 5))

    rng = np.random.default_rng(seed)
    trunk, disc_head, cls_head, generator = _build_minis(rng)
    for net in (trunk, generator):
        for _, p in net.params():
            p.data *= 15.0  # widen the tiny default init so margins have signal
    (gen_out,) = _clear_kinks(generator, [emb.reshape(2, 5, 1, 1)], margin)
    _clear_kinks(trunk, [real, fake, gen_out], margin)
    return trunk, disc_head, cls_head, generator, real, fake, emb


def _build_minis(rng):
    from voice2face.layers import LayerSpec, build_sequential

    trunk = build_sequential([
        LayerSpec("conv2d", kernel=1, stride=1, padding=0, in_channels=3, out_channels=4),
        LayerSpec("leaky_relu", leaky_slope=0.2),
        LayerSpec("conv2d", kernel=3, stride=2, padding=1, in_channels=4, out_channels=6),
        LayerSpec("leaky_relu", leaky_slope=0.2),
        LayerSpec("conv2d", kernel=4, stride=1, padding=0, in_channels=6, out_channels=8),
        LayerSpec("leaky_relu", leaky_slope=0.2),
    ], rng, dtype=np.float64)
    disc_head = build_sequential([
        LayerSpec("fully_connected", in_channels=8, out_channels=1),
        LayerSpec("sigmoid"),
    ], rng, dtype=np.float64)
    cls_head = build_sequential([
        LayerSpec("fully_connected", in_channels=8, out_channels=3),
        LayerSpec("softmax"),
    ], rng, dtype=np.float64)
    generator = build_sequential([
        LayerSpec("deconv2d", kernel=2, stride=1, padding=0, output_padding=0,
                  in_channels=5, out_channels=6),
        LayerSpec("relu"),
        LayerSpec("deconv2d", kernel=3, stride=2, padding=1, output_padding=1,
                  in_channels=6, out_channels=4),
        LayerSpec("relu"),
        LayerSpec("deconv2d", kernel=3, stride=2, padding=1, output_padding=1,
                  in_channels=4, out_channels=3),
        LayerSpec("tanh"),
    ], rng, dtype=np.float64)
    return trunk, disc_head, cls_head, generator


def _feats(trunk, x):
    out = trunk.forward(x)
    return out.reshape(out.data.shape[0], 8)


def run_gradient_suite(h: float = DEFAULT_H):
    """All layer primitives plus the three adversarial objectives.

    Returns [(check name, max relative error)]; everything runs in float64
    on miniature configurations.
    """
    from voice2face import ops
    from voice2face.layers import LayerSpec, build_sequential

    rng = np.random.default_rng(1234)
    results = []

    def weighted_scalar(op):
        # Projects an op's output to a scalar with fixed random weights so
        # every output element contributes to the checked gradient.
        def make(fn, out_shape):
            w = rng.normal(size=out_shape)

            def f(t):
                out = fn(t)
                return (out * Tensor(w.astype(np.float64))).sum()

            return f
        return make(*op)

    # conv1d: input, weight, bias
    w1 = Tensor(rng.normal(size=(4, 3, 3)), requires_grad=True)
    b1 = Tensor(rng.normal(size=4), requires_grad=True)
    x1 = Tensor(kink_free(rng, (2, 3, 7)))
    results.append(("conv1d/input", finite_difference_check(
        weighted_scalar((lambda t: ops.conv1d(t, w1, b1, 2, 1), (2, 4, 4))), x1, h)))
    results.append(("conv1d/params", check_parameter_gradients(
        lambda: (ops.conv1d(Tensor(x1.data), w1, b1, 2, 1)
                 * Tensor(rng_fixed_1.astype(np.float64))).sum(), [w1, b1], h)))

    # conv2d stride 2 and the 4x4 valid conv
    w2 = Tensor(rng.normal(size=(4, 3, 3, 3)), requires_grad=True)
    b2 = Tensor(rng.normal(size=4), requires_grad=True)
    x2 = Tensor(kink_free(rng, (2, 3, 6, 6)))
    results.append(("conv2d/input", finite_difference_check(
        weighted_scalar((lambda t: ops.conv2d(t, w2, b2, 2, 1), (2, 4, 3, 3))), x2, h)))
    results.append(("conv2d/params", check_parameter_gradients(
        lambda: (ops.conv2d(Tensor(x2.data), w2, b2, 2, 1)
                 * Tensor(rng_fixed_2.astype(np.float64))).sum(), [w2, b2], h)))
    w2b = Tensor(rng.normal(size=(5, 3, 4, 4)), requires_grad=True)
    b2b = Tensor(rng.normal(size=5), requires_grad=True)
    x2b = Tensor(kink_free(rng, (2, 3, 4, 4)))
    results.append(("conv2d_4x4/input", finite_difference_check(
        weighted_scalar((lambda t: ops.conv2d(t, w2b, b2b, 1, 0), (2, 5, 1, 1))), x2b, h)))

    # deconv2d strided with output padding, plus the 4x4 upsampler
    w3 = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
    b3 = Tensor(rng.normal(size=2), requires_grad=True)
    x3 = Tensor(kink_free(rng, (2, 3, 3, 3)))
    results.append(("deconv2d/input", finite_difference_check(
        weighted_scalar((lambda t: ops.deconv2d(t, w3, b3, 2, 1, 1), (2, 2, 6, 6))), x3, h)))
    results.append(("deconv2d/params", check_parameter_gradients(
        lambda: (ops.deconv2d(Tensor(x3.data), w3, b3, 2, 1, 1)
                 * Tensor(rng_fixed_3.astype(np.float64))).sum(), [w3, b3], h)))
    w3b = Tensor(rng.normal(size=(3, 2, 4, 4)), requires_grad=True)
    b3b = Tensor(rng.normal(size=2), requires_grad=True)
    x3b = Tensor(kink_free(rng, (2, 3, 1, 1)))
    results.append(("deconv2d_4x4/input", finite_difference_check(
        weighted_scalar((lambda t: ops.deconv2d(t, w3b, b3b, 1, 0, 0), (2, 2, 4, 4))), x3b, h)))

    # batch norm, train and infer
    bn = build_sequential([LayerSpec("batchnorm", in_channels=3)], rng, dtype=np.float64)
    bn_layer = bn.layers[0]
    xbn = Tensor(rng.normal(size=(4, 3, 5)))
    results.append(("batchnorm_train/input", finite_difference_check(
        weighted_scalar((lambda t: bn.forward(t, training=True), (4, 3, 5))), xbn, h)))
    results.append(("batchnorm_train/params", check_parameter_gradients(
        lambda: (bn.forward(Tensor(xbn.data), training=True)
                 * Tensor(rng_fixed_4.astype(np.float64))).sum(),
        [bn_layer.gamma, bn_layer.beta], h)))
    bn_layer.running_mean[:] = rng.normal(size=3)
    bn_layer.running_var[:] = rng.uniform(0.5, 2.0, size=3)
    results.append(("batchnorm_infer/input", finite_difference_check(
        weighted_scalar((lambda t: bn.forward(t, training=False), (4, 3, 5))), xbn, h)))

    # activations and pooling
    xa = Tensor(kink_free(rng, (3, 6)))
    results.append(("relu", finite_difference_check(
        weighted_scalar((ops.relu, (3, 6))), xa, h)))
    results.append(("leaky_relu", finite_difference_check(
        weighted_scalar((lambda t: ops.leaky_relu(t, 0.2), (3, 6))), xa, h)))
    results.append(("sigmoid", finite_difference_check(
        weighted_scalar((ops.sigmoid, (3, 6))), xa, h)))
    results.append(("tanh", finite_difference_check(
        weighted_scalar((ops.tanh, (3, 6))), xa, h)))
    results.append(("softmax", finite_difference_check(
        weighted_scalar((lambda t: ops.softmax(t, axis=1), (3, 6))), xa, h)))
    xp = Tensor(rng.normal(size=(2, 3, 5)))
    results.append(("time_avg_pool", finite_difference_check(
        weighted_scalar((ops.time_avg_pool, (2, 3))), xp, h)))

    # fully connected and the two losses
    wf = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    bf = Tensor(rng.normal(size=4), requires_grad=True)
    xf = Tensor(rng.normal(size=(3, 6)))
    results.append(("fully_connected/input", finite_difference_check(
        weighted_scalar((lambda t: ops.fully_connected(t, wf, bf), (3, 4))), xf, h)))
    labels01 = np.array([1.0, 0.0, 1.0])
    results.append(("binary_cross_entropy", finite_difference_check(
        lambda t: ops.binary_cross_entropy(ops.sigmoid(t), labels01).mean(),
        Tensor(rng.normal(size=3)), h)))
    labels_k = np.array([0, 2, 1])
    results.append(("categorical_cross_entropy", finite_difference_check(
        lambda t: ops.categorical_cross_entropy(ops.softmax(t, axis=1), labels_k).mean(),
        Tensor(rng.normal(size=(3, 4))), h)))
    results.append(("binary_cross_entropy_with_logits", finite_difference_check(
        lambda t: ops.binary_cross_entropy_with_logits(t, labels01).mean(),
        Tensor(rng.normal(size=3)), h)))
    results.append(("categorical_cross_entropy_with_logits", finite_difference_check(
        lambda t: ops.categorical_cross_entropy_with_logits(t, labels_k).mean(),
        Tensor(rng.normal(size=(3, 4))), h)))

    # the three adversarial objectives on miniature networks
    trunk, disc_head, cls_head, generator, real, fake, emb = _mini_networks()
    labels = np.array([0, 2])

    def disc_objective():
        # logit-space losses, exactly as the training steps compute them
        logits_r = disc_head.layers[0].forward(_feats(trunk, Tensor(real)))
        logits_f = disc_head.layers[0].forward(_feats(trunk, Tensor(fake)))
        ones = np.ones(2)
        zeros = np.zeros(2)
        return (ops.binary_cross_entropy_with_logits(logits_r.reshape(2), ones).mean()
                + ops.binary_cross_entropy_with_logits(logits_f.reshape(2), zeros).mean())

    d_params = [p for _, p in trunk.params()] + [p for _, p in disc_head.params()]
    results.append(("objective_discriminator", check_parameter_gradients(
        disc_objective, d_params, h)))

    def cls_objective():
        logits = cls_head.layers[0].forward(_feats(trunk, Tensor(real)))
        return ops.categorical_cross_entropy_with_logits(logits, labels).mean()

    c_params = [p for _, p in trunk.params()] + [p for _, p in cls_head.params()]
    results.append(("objective_classifier", check_parameter_gradients(
        cls_objective, c_params, h)))

    def gen_objective():
        fakes = generator.forward(Tensor(emb.reshape(2, 5, 1, 1)))
        score_logits = disc_head.layers[0].forward(_feats(trunk, fakes)).reshape(2)
        cls_logits = cls_head.layers[0].forward(_feats(trunk, fakes))
        return (ops.binary_cross_entropy_with_logits(score_logits, np.ones(2)).mean()
                + ops.categorical_cross_entropy_with_logits(cls_logits, labels).mean())

    g_params = [p for _, p in generator.params()]
    results.append(("objective_generator", check_parameter_gradients(
        gen_objective, g_params, h)))

    # discriminator loss w.r.t. a random image input
    results.append(("discriminator_loss/input", finite_difference_check(
        lambda t: ops.binary_cross_entropy(
            disc_head.forward(_feats(trunk, t)).reshape(2), np.ones(2)).mean(),
        Tensor(real), h)))

    return results


# Fixed projection weights for the parameter checks (sized to the op outputs).
_proj_rng = np.random.default_rng(99)
rng_fixed_1 = _proj_rng.normal(size=(2, 4, 4))
rng_fixed_2 = _proj_rng.normal(size=(2, 4, 3, 3))
rng_fixed_3 = _proj_rng.normal(size=(2, 2, 6, 6))
rng_fixed_4 = _proj_rng.normal(size=(4, 3, 5))
