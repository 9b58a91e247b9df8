"""Finite-difference gradient verification.

The central-difference quotient is the independent oracle for everything the
tape computes; nothing here reuses backward rules.
"""

import numpy as np

from .errors import UsageError
from .tensor import Tape, Tensor, backward


def fd_check(f, x, step=1e-5, indices=None):
    """Compare tape gradients of scalar f(x) against central differences.

    f must be a deterministic map from one Tensor to a scalar Tensor. The
    perturbation for coordinate i is step * max(1, |x_i|). When ``indices``
    is given, only those flat coordinates are probed, which is how large
    parameter tensors get spot-checked at a sample of coordinates.

    Returns the worst relative error, |analytic - numeric| divided by
    max(|analytic|, |numeric|, 1e-8).
    """
    base = np.array(getattr(x, "data", x), dtype=np.float64, copy=True)

    probe = Tensor(base.copy(), requires_grad=True)
    with Tape():
        out = f(probe)
        if out.data.ndim != 0:
            raise UsageError(f"fd_check: f returned shape {out.data.shape}, not scalar")
        backward(out)
    analytic = probe.grad
    if analytic is None:
        analytic = np.zeros_like(base)
    analytic = analytic.ravel()

    flat = base.ravel()
    if indices is None:
        indices = range(flat.size)
    worst = 0.0
    for i in indices:
        h = step * max(1.0, abs(flat[i]))
        bumped = base.copy()
        bumped.reshape(-1)[i] = flat[i] + h
        f_plus = f(Tensor(bumped)).item()
        bumped.reshape(-1)[i] = flat[i] - h
        f_minus = f(Tensor(bumped)).item()
        numeric = (f_plus - f_minus) / (2.0 * h)
        a = analytic[i]
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        if rel > worst:
            worst = rel
    return worst


def fd_check_param(loss_fn, param, step=1e-5, indices=None):
    """fd_check for a parameter embedded in a model.

    ``loss_fn`` takes no arguments and must recompute the scalar loss from
    live parameter state on every call. The analytic side runs loss_fn under
    a tape and reads ``param.grad``; the numeric side perturbs ``param.data``
    in place with no tape active. Same error definition as fd_check.
    """
    param.grad = None
    with Tape():
        backward(loss_fn())
    analytic = param.grad
    if analytic is None:
        analytic = np.zeros_like(param.data)
    analytic = analytic.ravel()
    param.grad = None

    flat = param.data.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    worst = 0.0
    for i in indices:
        orig = flat[i]
        h = step * max(1.0, abs(orig))
        flat[i] = orig + h
        f_plus = loss_fn().item()
        flat[i] = orig - h
        f_minus = loss_fn().item()
        flat[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        a = analytic[i]
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        if rel > worst:
            worst = rel
    return worst


def run_suite(step=1e-4, seed=11):
    """The quick gradient suite behind the gradcheck CLI command.

    Small shapes, every op family plus one end-to-end model loss probed at a
    parameter sample. Returns [(name, max_rel_error)]. The default step is
    coarser than fd_check's: the end-to-end model graph accumulates enough
    rounding noise that a 1e-5 perturbation is eaten by it.
    """
    from . import blocks, losses, model, tensor
    from .rng import Xoshiro256StarStar

    stream = Xoshiro256StarStar(seed)

    def rand(*shape):
        return stream.normal(int(np.prod(shape))).reshape(shape)

    results = []

    def check(name, f, x, indices=None):
        results.append((name, fd_check(f, Tensor(x), step=step, indices=indices)))

    a = rand(3, 4)
    b = rand(3, 4)
    check("mul", lambda t: tensor.reduce_sum(tensor.mul(t, Tensor(b))), a)
    check(
        "div",
        lambda t: tensor.reduce_sum(tensor.div(t, Tensor(np.abs(b) + 0.5))),
        a,
    )
    check("gelu", lambda t: tensor.reduce_sum(tensor.gelu(t)), a)
    check("sqrt", lambda t: tensor.reduce_sum(tensor.sqrt(t)), np.abs(a) + 0.5)
    check("acos", lambda t: tensor.reduce_sum(tensor.acos(t)), np.tanh(a) * 0.9)
    m_fixed = rand(4, 5)
    check(
        "matmul",
        lambda t: tensor.reduce_sum(tensor.matmul(t, Tensor(m_fixed))),
        a,
    )
    w = rand(4, 2, 3, 3)
    check(
        "conv2d_input",
        lambda t: tensor.reduce_sum(tensor.conv2d(t, Tensor(w), 1)),
        rand(2, 5, 6),
    )
    x_fixed = rand(2, 5, 6)
    check(
        "conv2d_weight",
        lambda t: tensor.reduce_sum(tensor.conv2d(Tensor(x_fixed), t, 1)),
        w,
    )
    q = rand(9, 4)
    v_fixed = rand(9, 4)
    check(
        "spa_sc",
        lambda t: tensor.reduce_sum(blocks.spa_sc(t, Tensor(v_fixed))),
        q,
    )
    check(
        "spe_sc",
        lambda t: tensor.reduce_sum(blocks.spe_sc(Tensor(q), t)),
        v_fixed,
    )
    target = np.abs(rand(4, 6, 6)) * 0.2 + 0.3
    pred0 = target + rand(4, 6, 6) * 0.05
    check(
        "total_loss",
        lambda t: losses.total_loss(t, Tensor(target)),
        pred0,
    )

    cfg = model.ModelConfig(
        hsi_bands=4, msi_bands=2, feat=4, n_blocks=1, block_windows=(4,), ratio=2,
        seed=3,
    )
    net = model.Model(cfg)
    # at initialization every residual path is zero, which makes most
    # parameter gradients trivially zero; jitter all params so the check
    # exercises live paths
    for _, param in net.named_params():
        param.data += 0.05 * rand(*param.data.shape)
    lr_in = np.abs(rand(4, 4, 4)) * 0.5
    msi_in = np.abs(rand(2, 8, 8)) * 0.5
    tgt = np.abs(rand(4, 8, 8)) * 0.5 + 0.25

    def model_loss():
        return losses.total_loss(net.forward(lr_in, msi_in), Tensor(tgt))

    names = net.named_params()
    for pick in (0, len(names) // 2, len(names) - 4):
        name, param = names[pick]
        # central differences cannot resolve coordinates whose gradient sits
        # below the rounding noise of the full forward pass, so probe the
        # largest entries of this parameter's gradient
        param.grad = None
        with Tape():
            backward(model_loss())
        order = np.argsort(-np.abs(param.grad.ravel()))
        param.grad = None
        err = fd_check_param(model_loss, param, step=step,
                             indices=order[: min(6, param.size)])
        results.append((f"model[{name}]", err))
    return results
