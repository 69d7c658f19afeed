"""Pure numpy implementation of the shape-function kernels.

Parameters of one MLP live in a flat float64 vector; each layer stores its
weight matrix ``W`` (``out x in``, row major) followed by its bias ``b``.
Activations are kept feature-major, shape ``(width, n_samples)``.
"""
import numpy as np

BACKEND = "python"


def _layers(params, widths):
    off = 0
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        w = params[off:off + fan_in * fan_out].reshape(fan_out, fan_in)
        off += fan_in * fan_out
        b = params[off:off + fan_out]
        off += fan_out
        yield w, b


def mlp_forward(params, widths, x):
    """Evaluate the MLP on a batch of scalars.

    Returns the outputs ``(n,)`` and the list of post-activation arrays needed
    by :func:`mlp_backward`.
    """
    h = np.ascontiguousarray(x, dtype=np.float64).reshape(1, -1)
    acts = [h]
    layers = list(_layers(params, widths))
    for i, (w, b) in enumerate(layers):
        z = w @ h + b[:, None]
        if i < len(layers) - 1:
            h = np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))
        else:
            h = z
        acts.append(h)
    return h[0].copy(), acts


def mlp_backward(params, widths, acts, grad_out):
    """Reverse pass; returns ``(grad_input (n,), grad_params (len(params),))``."""
    layers = list(_layers(params, widths))
    grad = np.empty_like(params)
    g = np.asarray(grad_out, dtype=np.float64).reshape(1, -1)
    offsets = []
    off = 0
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        offsets.append(off)
        off += fan_in * fan_out + fan_out
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        if i < len(layers) - 1:
            a = acts[i + 1]
            g = g * np.where(a > 0, 1.0, a + 1.0)
        h_prev = acts[i]
        fan_out, fan_in = w.shape
        o = offsets[i]
        grad[o:o + fan_in * fan_out] = (g @ h_prev.T).ravel()
        grad[o + fan_in * fan_out:o + fan_in * fan_out + fan_out] = g.sum(axis=1)
        g = w.T @ g
    return g[0].copy(), grad


def adam_step(params, grad, m, v, step, lr, beta1, beta2, eps, weight_decay):
    """In-place Adam update with L2 weight decay folded into the gradient."""
    if weight_decay:
        grad = grad + weight_decay * params
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    params -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
