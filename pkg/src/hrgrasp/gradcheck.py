"""Central finite-difference verification of the analytic gradients.

The checks rerun the forward pass in float64 (the ops follow their input
dtype) so the difference quotient at step 1e-3 is trustworthy; the analytic
side is whatever :func:`hrgrasp.tensor.backward` produces for the same graph.
"""

from __future__ import annotations

import time
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import BNState, Tensor


def rel_error(a: float, n: float, floor: float = 1e-3) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    probes: Sequence[Tensor],
    n_probes: int = 20,
    eps: float = 1e-3,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` rebuilds the graph from the probe tensors' current data on
    every call. At least ``n_probes`` random elements are probed across the
    probe tensors (every tensor gets at least one).

    A difference quotient whose interval straddles ReLU kinks mixes one-sided
    slopes and is not the derivative. Probes that disagree with the analytic
    value at the nominal step are therefore re-measured at eps/8 and eps/64:
    if the estimates converge, the converged value is the oracle the analytic
    gradient must match; if they do not, the point is non-smooth at probe
    scale and the measurement is discarded. Only forward evaluations are
    used, so a wrong analytic gradient cannot pass by this route.
    """
    rng = rng or np.random.Generator(np.random.PCG64(0))
    for t in probes:
        t.zero_grad()
    loss = loss_fn()
    T.backward(loss)

    analytic = []
    for t in probes:
        if t.grad is None:
            raise AssertionError(f"no gradient reached probe tensor {t.name or t}")
        analytic.append(t.grad.reshape(-1).copy())

    def central(flat, i, step):
        orig = flat[i]
        flat[i] = orig + step
        up = loss_fn().item()
        flat[i] = orig - step
        dn = loss_fn().item()
        flat[i] = orig
        return (up - dn) / (2.0 * step)

    worst = 0.0
    kept = 0
    per_tensor = max(1, int(np.ceil(n_probes / len(probes))))
    for ti, t in enumerate(probes):
        flat = t.data.reshape(-1)
        idx = rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False)
        for i in idx:
            numeric = central(flat, i, eps)
            err = rel_error(analytic[ti][i], numeric)
            if err > 1e-4:
                fine = central(flat, i, eps / 8.0)
                finer = central(flat, i, eps / 64.0)
                if rel_error(fine, finer) > 5e-3:
                    continue  # non-smooth at probe scale, not a valid measurement
                err = rel_error(analytic[ti][i], finer)
            worst = max(worst, err)
            kept += 1
    if kept == 0:
        raise AssertionError("every finite-difference probe hit a kink")
    return worst


def _rand(rng, *shape, f64=True, offset=0.0):
    data = rng.standard_normal(shape) + offset
    return Tensor(data.astype(np.float64 if f64 else np.float32), requires_grad=True)


def _suite_cases(rng: np.random.Generator):
    """(name, loss_fn, probe tensors) triples covering every differentiable op."""
    cases = []

    for stride in (1, 2):
        for padding in (0, 1):
            x = _rand(rng, 2, 3, 7, 7)
            w = _rand(rng, 4, 3, 3, 3)
            b = _rand(rng, 1, 4, 1, 1)

            def loss(x=x, w=w, b=b, s=stride, p=padding):
                return T.mean_all(T.mul(y := T.conv2d(x, w, b, stride=s, padding=p), y))

            cases.append((f"conv2d[s{stride}p{padding}]", loss, [x, w, b]))

    x = _rand(rng, 1, 2, 5, 5)
    w1 = _rand(rng, 3, 2, 1, 1)

    def loss_c1(x=x, w1=w1):
        return T.mean_all(T.mul(y := T.conv2d(x, w1), y))

    cases.append(("conv2d[1x1]", loss_c1, [x, w1]))

    for scl in (2, 3):
        x = _rand(rng, 1, 2, 4, 5)

        def loss_up(x=x, s=scl):
            y = T.bilinear_upsample(x, s)
            return T.mean_all(T.mul(y, y))

        cases.append((f"bilinear_upsample[x{scl}]", loss_up, [x]))

    for training in (True, False):
        x = _rand(rng, 3, 4, 5, 5)
        gamma = _rand(rng, 1, 4, 1, 1, offset=1.0)
        beta = _rand(rng, 1, 4, 1, 1)
        state = BNState(4)
        state.mean = rng.standard_normal(4).astype(np.float32)
        state.var = (1.0 + rng.random(4)).astype(np.float32)

        def loss_bn(x=x, g=gamma, b=beta, st=state, tr=training):
            y = T.batchnorm2d(x, g, b, st.copy(), training=tr)
            return T.mean_all(T.mul(y, y))

        mode = "train" if training else "eval"
        cases.append((f"batchnorm2d[{mode}]", loss_bn, [x, gamma, beta]))

    x = _rand(rng, 2, 3, 4, 4, offset=0.5)  # keep probes off the ReLU kink

    def loss_relu(x=x):
        return T.mean_all(T.mul(y := T.relu(x), y))

    cases.append(("relu", loss_relu, [x]))

    a = _rand(rng, 2, 3, 4, 4)
    b2 = _rand(rng, 2, 3, 4, 4)
    cases.append(("add", lambda a=a, b=b2: T.mean_all(T.mul(y := T.add(a, b), y)), [a, b2]))
    cases.append(("sub", lambda a=a, b=b2: T.mean_all(T.mul(y := T.sub(a, b), y)), [a, b2]))
    cases.append(("mul", lambda a=a, b=b2: T.mean_all(T.mul(a, b)), [a, b2]))

    xs = [_rand(rng, 1, c, 3, 3) for c in (2, 3, 1)]

    def loss_cat(xs=xs):
        y = T.concat_channels(xs)
        return T.mean_all(T.mul(y, y))

    cases.append(("concat_channels", loss_cat, xs))

    x = _rand(rng, 1, 5, 3, 3)

    def loss_slice(x=x):
        y = T.slice_channels(x, 1, 4)
        return T.mean_all(T.mul(y, y))

    cases.append(("slice_channels", loss_slice, [x]))

    for name, fn in (("sigmoid", T.sigmoid), ("tanh", T.tanh)):
        x = _rand(rng, 2, 2, 3, 3)
        cases.append(
            (name, lambda x=x, fn=fn: T.mean_all(T.mul(y := fn(x), y)), [x])
        )

    x = _rand(rng, 2, 2, 3, 3)
    cases.append(("sum_all", lambda x=x: T.scale(T.mul(s := T.sum_all(x), s), 0.5), [x]))

    # random 3-op compositions: conv -> bn -> relu -> mse against a constant
    for k in range(3):
        x = _rand(rng, 2, 3, 6, 6)
        w = _rand(rng, 5, 3, 3, 3)
        b = _rand(rng, 1, 5, 1, 1)
        gamma = _rand(rng, 1, 5, 1, 1, offset=1.0)
        beta = _rand(rng, 1, 5, 1, 1)
        target = Tensor(rng.standard_normal((2, 5, 6, 6)) + 0.5)

        def loss_chain(x=x, w=w, b=b, g=gamma, bt=beta, t=target):
            y = T.conv2d(x, w, b, stride=1, padding=1)
            y = T.batchnorm2d(y, g, bt, BNState(5), training=True)
            y = T.relu(y)
            d = T.sub(y, t)
            return T.scale(T.mean_all(T.mul(d, d)), 0.5)

        cases.append((f"chain conv-bn-relu-mse[{k}]", loss_chain, [x, w, gamma, beta, b]))

    return cases


def cast_params_float64(tensors: dict[str, Tensor]) -> None:
    for t in tensors.values():
        t.data = t.data.astype(np.float64)


def run_op_suite(seed: int = 0, n_probes: int = 20) -> list[tuple[str, float]]:
    """Finite-difference check of every differentiable op; (name, max rel err) rows."""
    rng = np.random.Generator(np.random.PCG64(seed))
    results = []
    for name, loss_fn, probes in _suite_cases(rng):
        err = check_gradients(loss_fn, probes, n_probes=n_probes, rng=rng)
        results.append((name, err))
    return results


def run_model_check(seed: int = 0, n_probes: int = 24) -> tuple[str, float]:
    """End-to-end check on a reduced 32x32 build of the full network."""
    from .model import ModelConfig, build

    config = ModelConfig(input_channels=1, input_size=(32, 32))
    mdl = build(config, seed=seed)
    cast_params_float64(mdl.bag.tensors)
    rng = np.random.Generator(np.random.PCG64(seed + 1))
    x = Tensor(rng.standard_normal((1, 1, 32, 32)), requires_grad=True)
    target = Tensor(rng.random((1, 4, 32, 32)))

    def loss_fn():
        out = mdl.forward(x, training=True).stacked()
        d = T.sub(out, target)
        return T.scale(T.mean_all(T.mul(d, d)), 0.5)

    probes = [x] + [
        mdl.bag[name]
        for name in (
            "stem.conv1.weight",
            "stage1.branch0.block0.conv1.weight",
            "stage2.fuse.d0_1.s0.weight",
            "stage3.fuse.u2_0.weight",
            "stage4.branch3.block1.conv2.weight",
            "stage2.fuse.u1_0.gamma",
            "transition2.weight",
            "head.quality.weight",
            "head.sin.bias",
        )
    ]
    err = check_gradients(loss_fn, probes, n_probes=n_probes, rng=rng)
    return ("model[32x32 end-to-end]", err)


def run_full_suite(seed: int = 0) -> list[tuple[str, float]]:
    rows = run_op_suite(seed)
    rows.append(run_model_check(seed))
    return rows
