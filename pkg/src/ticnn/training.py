"""Loss, reverse-mode gradients, and symmetry-preserving weight updates.

Gradients are computed for every weight as if it were unconstrained; the
sharing constraint enters only at update time, where the raw gradient is
projected onto the constraint set (orbit sum or orbit mean) before the SGD
step.  Because the projection writes one common float into every cell of an
orbit, a kernel that starts exactly shared stays exactly shared, bit for
bit, through any number of steps.

The sum-mode projection multiplies the effective gain by the orbit size; the
training loop compensates with a 1/group-order learning-rate scale, which is
why average mode is the default.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, TrainingDivergedError
from .network import (
    FeatureBank,
    FlattenKernel,
    Layer,
    Network,
    Pipeline,
    _as_channels,
    _head_forward,
    invariance_residual,
    line_ids,
    project_line_shared,
)
from .scan import (
    TIKernel,
    _pair,
    activation_derivative,
    apply_activation,
    conv2d,
)
from .symmetry import SymmetryGroup, _symmetrize_hw, symmetrize
from .tensor import as_tensor

LOSS_KINDS = ("mse", "cross_entropy")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    epochs: int
    batch_size: int
    update_mode: str = "average"
    loss: str = "mse"
    seed: int = 0
    momentum: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.update_mode not in ("sum", "average"):
            raise ValueError("update_mode must be 'sum' or 'average'")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}")


def _softmax(v: np.ndarray) -> np.ndarray:
    z = v - np.max(v)
    e = np.exp(z)
    return e / e.sum()


def loss(pred, target, kind: str) -> float:
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ShapeError(f"prediction length {p.size} != target length {t.size}")
    if kind == "mse":
        d = p - t
        return float(np.mean(d * d))
    if kind == "cross_entropy":
        sm = _softmax(p)
        return float(-np.sum(t * np.log(np.clip(sm, 1e-300, None))))
    raise ValueError(f"unknown loss {kind!r}")


def loss_gradient(pred, target, kind: str) -> np.ndarray:
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    if kind == "mse":
        return 2.0 * (p - t) / p.size
    if kind == "cross_entropy":
        return _softmax(p) * t.sum() - t
    raise ValueError(f"unknown loss {kind!r}")


@dataclass
class LayerGradients:
    kernels: np.ndarray  # (out, in, k, k)
    mix: np.ndarray | None


@dataclass
class PipelineGradients:
    layers: list[LayerGradients]
    flatten: np.ndarray  # (nodes, h, w)


@dataclass
class GradientSet:
    pipelines: list[PipelineGradients]
    head: list[np.ndarray]

    def check_finite(self):
        for pg in self.pipelines:
            for lg in pg.layers:
                if not np.all(np.isfinite(lg.kernels)):
                    raise TrainingDivergedError("non-finite kernel gradient")
                if lg.mix is not None and not np.all(np.isfinite(lg.mix)):
                    raise TrainingDivergedError("non-finite mix gradient")
            if not np.all(np.isfinite(pg.flatten)):
                raise TrainingDivergedError("non-finite flatten gradient")
        for h in self.head:
            if not np.all(np.isfinite(h)):
                raise TrainingDivergedError("non-finite head gradient")


def _traced_forward(net: Network, x: np.ndarray):
    trace = {"pipelines": []}
    bank_vals = []
    for p in net.pipelines:
        cur = x
        layer_recs = []
        for layer in p.layers:
            spec = layer.spec
            conv = np.stack([
                sum(conv2d(cur[i], layer.kernels[o][i], spec.scan.stride)
                    for i in range(spec.in_channels))
                for o in range(spec.out_channels)
            ])
            pre = np.einsum("oc,chw->ohw", layer.mix, conv) if layer.mix is not None else conv
            act = apply_activation(pre, spec.scan.activation)
            if spec.scan.pool_kind != "none":
                pv, ph = _pair(spec.scan.pool_size)
                c, h, w = act.shape
                if h % pv or w % ph:
                    raise ShapeError("training requires evenly divisible pooling")
                blocks = act.reshape(c, h // pv, pv, w // ph, ph)
                out = blocks.max(axis=(2, 4)) if spec.scan.pool_kind == "max" else blocks.mean(axis=(2, 4))
            else:
                out = act
            layer_recs.append({"x": cur, "conv": conv, "pre": pre, "act": act, "out": out})
            cur = out
        chan_sum = cur.sum(axis=0)
        flat_pre = np.array([float(np.einsum("ij,ij->", chan_sum, kf.weights)) for kf in p.flatten])
        bank = apply_activation(flat_pre, p.flatten_activation)
        trace["pipelines"].append({
            "layers": layer_recs, "final": cur, "chan_sum": chan_sum,
            "flat_pre": flat_pre, "bank": bank,
        })
        bank_vals.append(bank)
    v = np.concatenate(bank_vals)
    trace["bank_concat"] = v
    head_ins, head_pres = [], []
    for i, mat in enumerate(net.head):
        head_ins.append(v)
        pre = mat @ v
        head_pres.append(pre)
        v = apply_activation(pre, net.head_activation) if i < len(net.head) - 1 else pre
    trace["head_ins"] = head_ins
    trace["head_pres"] = head_pres
    trace["output"] = v
    return trace


def _pool_backward(layer: Layer, rec, d_out: np.ndarray) -> np.ndarray:
    spec = layer.spec
    if spec.scan.pool_kind == "none":
        return d_out
    pv, ph = _pair(spec.scan.pool_size)
    act = rec["act"]
    c, h, w = act.shape
    if spec.scan.pool_kind == "average":
        d = np.repeat(np.repeat(d_out, pv, axis=1), ph, axis=2) / (pv * ph)
        return d
    blocks = act.reshape(c, h // pv, pv, w // ph, ph).transpose(0, 1, 3, 2, 4)
    flat = blocks.reshape(c, h // pv, w // ph, pv * ph)
    arg = flat.argmax(axis=3)  # first maximum wins: deterministic
    mask = np.zeros_like(flat)
    np.put_along_axis(mask, arg[..., np.newaxis], 1.0, axis=3)
    d = mask * d_out[..., np.newaxis]
    d = d.reshape(c, h // pv, w // ph, pv, ph).transpose(0, 1, 3, 2, 4).reshape(c, h, w)
    return d


def _conv_backward(layer: Layer, rec, d_conv: np.ndarray):
    spec = layer.spec
    k = spec.kernel_size
    sv, sh = _pair(spec.scan.stride)
    x = rec["x"]
    n_out, n_in = spec.out_channels, spec.in_channels
    d_kern = np.zeros((n_out, n_in, k, k))
    d_x = np.zeros_like(x)
    ho, wo = d_conv.shape[1:]
    for i in range(n_in):
        windows = sliding_window_view(x[i], (k, k))[::sv, ::sh]
        for o in range(n_out):
            d_kern[o, i] = np.einsum("ijuv,ij->uv", windows, d_conv[o])
            kw = layer.kernels[o][i].weights
            for u in range(k):
                for v in range(k):
                    d_x[i, u:u + sv * ho:sv, v:v + sh * wo:sh] += kw[u, v] * d_conv[o]
    return d_kern, d_x


def backward(net: Network, input_t, target, config: TrainConfig) -> GradientSet:
    """Exact reverse-mode gradient of the loss with respect to every weight."""
    _, grads = loss_and_gradients(net, input_t, target, config)
    return grads


def loss_and_gradients(net: Network, input_t, target, config: TrainConfig):
    x = _as_channels(input_t, net.pipelines[0].layers[0].spec.in_channels)
    trace = _traced_forward(net, x)
    out = trace["output"]
    value = loss(out, target, config.loss)
    d = loss_gradient(out, target, config.loss)

    head_grads = [None] * len(net.head)
    for i in range(len(net.head) - 1, -1, -1):
        if i < len(net.head) - 1:
            d = d * activation_derivative(net.head_activation, trace["head_pres"][i])
        head_grads[i] = np.outer(d, trace["head_ins"][i])
        d = net.head[i].T @ d
    d_banks = d

    pipe_grads = []
    offset = 0
    for p, ptr in zip(net.pipelines, trace["pipelines"]):
        n_nodes = len(p.flatten)
        d_bank = d_banks[offset:offset + n_nodes]
        offset += n_nodes
        d_flat_pre = d_bank * activation_derivative(p.flatten_activation, ptr["flat_pre"])
        d_flatten = d_flat_pre[:, np.newaxis, np.newaxis] * ptr["chan_sum"][np.newaxis]
        d_chan_sum = np.einsum("n,nij->ij", d_flat_pre, np.stack([kf.weights for kf in p.flatten]))
        d_cur = np.broadcast_to(d_chan_sum, ptr["final"].shape).copy()

        layer_grads: list[LayerGradients] = []
        for layer, rec in zip(reversed(p.layers), reversed(ptr["layers"])):
            d_act = _pool_backward(layer, rec, d_cur)
            d_pre = d_act * activation_derivative(layer.spec.scan.activation, rec["pre"])
            if layer.mix is not None:
                d_mix = np.einsum("ohw,chw->oc", d_pre, rec["conv"])
                d_conv = np.einsum("oc,ohw->chw", layer.mix, d_pre)
            else:
                d_mix = None
                d_conv = d_pre
            d_kern, d_cur = _conv_backward(layer, rec, d_conv)
            layer_grads.append(LayerGradients(d_kern, d_mix))
        pipe_grads.append(PipelineGradients(list(reversed(layer_grads)), d_flatten))
    return value, GradientSet(pipe_grads, head_grads)


def symmetrized_update(kernel: TIKernel, grad, lr: float, mode: str = "average") -> TIKernel:
    """One SGD step that provably keeps the kernel on its constraint set.

    The gradient is projected (orbit sum or orbit mean over the kernel's
    group), scaled by ``-lr`` and added.  Unconstrained kernels update
    plainly.
    """
    g = as_tensor(grad)
    if g.shape != kernel.weights.shape:
        raise ShapeError("gradient shape does not match kernel")
    if kernel.group is None:
        return TIKernel(kernel.weights - lr * g, None)
    gs = symmetrize(g, kernel.group, mode)
    return TIKernel(kernel.weights - lr * gs, kernel.group)


def _project_flatten_grad(grad: np.ndarray, sharing, mode: str) -> np.ndarray:
    if sharing is None:
        return grad
    if isinstance(sharing, SymmetryGroup):
        return _symmetrize_hw(grad, sharing, mode)
    if mode == "average":
        return project_line_shared(grad, sharing)
    ids = line_ids(grad.shape[0], grad.shape[1], sharing).ravel()
    sums = np.bincount(ids, weights=grad.ravel())
    return sums[ids].reshape(grad.shape)


def init_ti(k: int, group: SymmetryGroup | None, seed: int, channels: int = 1) -> TIKernel:
    """Fresh kernel: uniform in [-r, r], r = 1/(k*sqrt(channels)), then projected.

    The scale keeps pre-activation variance O(1) for a fan-in of
    ``channels * k * k``.  Deterministic in ``seed``; the projection makes
    the invariance exact, not approximate.
    """
    rng = np.random.default_rng(seed)
    r = 1.0 / (k * np.sqrt(max(1, channels)))
    w = rng.uniform(-r, r, size=(k, k))
    if group is not None:
        w = symmetrize(w, group, "average")
    return TIKernel(w, group)


def _zero_like_grads(net: Network) -> GradientSet:
    pipes = []
    for p in net.pipelines:
        layers = []
        for layer in p.layers:
            k = layer.spec.kernel_size
            layers.append(LayerGradients(
                np.zeros((layer.spec.out_channels, layer.spec.in_channels, k, k)),
                np.zeros_like(layer.mix) if layer.mix is not None else None))
        flat = np.zeros((len(p.flatten),) + p.flatten[0].weights.shape)
        pipes.append(PipelineGradients(layers, flat))
    return GradientSet(pipes, [np.zeros_like(m) for m in net.head])


def _accumulate(total: GradientSet, g: GradientSet, scale: float = 1.0):
    for pt, pg in zip(total.pipelines, g.pipelines):
        for lt, lg in zip(pt.layers, pg.layers):
            lt.kernels += scale * lg.kernels
            if lt.mix is not None:
                lt.mix += scale * lg.mix
        pt.flatten += scale * pg.flatten
    for ht, hg in zip(total.head, g.head):
        ht += scale * hg


def _apply_updates(net: Network, grads: GradientSet, velocity: GradientSet,
                   config: TrainConfig, trainable_pipelines, train_head: bool):
    lr, mu = config.learning_rate, config.momentum
    mode = config.update_mode
    for idx, (p, pg, pv) in enumerate(zip(net.pipelines, grads.pipelines, velocity.pipelines)):
        if trainable_pipelines is not None and idx not in trainable_pipelines:
            continue
        for layer, lg, lv in zip(p.layers, pg.layers, pv.layers):
            group = layer.kernels[0][0].group
            scale = 1.0
            if mode == "sum" and group is not None:
                scale = 1.0 / group.order  # gain adjustment for sum-mode sharing
            for o in range(layer.spec.out_channels):
                for i in range(layer.spec.in_channels):
                    kern = layer.kernels[o][i]
                    g = lg.kernels[o, i]
                    gp = g if kern.group is None else symmetrize(g, kern.group, mode)
                    lv.kernels[o, i] = mu * lv.kernels[o, i] + gp
                    layer.kernels[o][i] = TIKernel(
                        kern.weights - lr * scale * lv.kernels[o, i], kern.group)
            if layer.mix is not None:
                lv.mix = mu * lv.mix + lg.mix
                layer.mix = layer.mix - lr * lv.mix
        for n, kf in enumerate(p.flatten):
            gp = _project_flatten_grad(pg.flatten[n], kf.sharing, mode)
            scale = 1.0
            if mode == "sum" and isinstance(kf.sharing, SymmetryGroup):
                scale = 1.0 / kf.sharing.order
            pv.flatten[n] = mu * pv.flatten[n] + gp
            p.flatten[n] = FlattenKernel(kf.weights - lr * scale * pv.flatten[n], kf.sharing)
    if train_head:
        for i, (mat, hg, hv) in enumerate(zip(net.head, grads.head, velocity.head)):
            velocity.head[i] = mu * hv + hg
            net.head[i] = mat - lr * velocity.head[i]


def train(net: Network, dataset, config: TrainConfig, *,
          trainable_pipelines=None, train_head: bool = True,
          probe=None, probe_elements=None, step_callback=None):
    """Mini-batch SGD over ``dataset`` (pairs of input, target vector).

    Deterministic given the seed; every constrained kernel keeps its sharing
    invariant exactly after every step.  When ``probe`` and
    ``probe_elements`` are given, the per-epoch history also records the
    end-to-end invariance residual on that input.  A non-finite loss aborts
    with :class:`TrainingDivergedError`.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    rng = np.random.default_rng(config.seed)
    velocity = _zero_like_grads(net)
    history = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            total = _zero_like_grads(net)
            batch_loss = 0.0
            for j in batch:
                x, t = dataset[j]
                value, g = loss_and_gradients(net, x, t, config)
                if not np.isfinite(value):
                    raise TrainingDivergedError(
                        f"loss became non-finite at epoch {epoch}, example {int(j)}")
                batch_loss += value
                _accumulate(total, g, 1.0 / len(batch))
            total.check_finite()
            _apply_updates(net, total, velocity, config, trainable_pipelines, train_head)
            epoch_loss += batch_loss
            step += 1
            if step_callback is not None:
                step_callback(step, net)
        entry = {"epoch": epoch, "loss": epoch_loss / len(order)}
        if probe is not None and probe_elements is not None:
            entry["invariance_residual"] = invariance_residual(net, probe, probe_elements)
        history.append(entry)
    return net, history


def write_history_csv(history, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,loss,invariance_residual\n")
        for row in history:
            resid = row.get("invariance_residual")
            tail = "" if resid is None else repr(resid)
            fh.write(f"{row['epoch']},{row['loss']!r},{tail}\n")


# ---------------------------------------------------------------------------
# Finite-difference verification of the analytic gradients.


def _free_parameter_groups(net: Network):
    """Yield (label, array, cell list) for every independent weight.

    For shared kernels the independent weight is the whole orbit (or line),
    so the finite difference perturbs all member cells jointly and the
    analytic reference is the sum of the raw gradient over the members.
    """
    from .symmetry import _orbits_hw

    for pi, p in enumerate(net.pipelines):
        for li, layer in enumerate(p.layers):
            k = layer.spec.kernel_size
            for o in range(layer.spec.out_channels):
                for i in range(layer.spec.in_channels):
                    kern = layer.kernels[o][i]
                    if kern.group is None:
                        cells = [((r, c),) for r in range(k) for c in range(k)]
                    else:
                        cells = list(_orbits_hw(kern.group.kind, k, k))
                    for cell_group in cells:
                        yield (f"p{pi}.l{li}.k[{o}][{i}]", ("kernel", pi, li, o, i), cell_group)
            if layer.mix is not None:
                for r in range(layer.mix.shape[0]):
                    for c in range(layer.mix.shape[1]):
                        yield (f"p{pi}.l{li}.mix", ("mix", pi, li), ((r, c),))
        for n, kf in enumerate(p.flatten):
            h, w = kf.weights.shape
            if kf.sharing is None:
                cells = [((r, c),) for r in range(h) for c in range(w)]
            elif isinstance(kf.sharing, SymmetryGroup):
                cells = list(_orbits_hw(kf.sharing.kind, h, w))
            else:
                ids = line_ids(h, w, kf.sharing)
                cells = [tuple(zip(*np.nonzero(ids == v))) for v in np.unique(ids)]
            for cell_group in cells:
                yield (f"p{pi}.flat[{n}]", ("flatten", pi, n), cell_group)
    for hi in range(len(net.head)):
        mat = net.head[hi]
        for r in range(mat.shape[0]):
            for c in range(mat.shape[1]):
                yield (f"head[{hi}]", ("head", hi), ((r, c),))


def _param_array(net: Network, key) -> np.ndarray:
    kind = key[0]
    if kind == "kernel":
        _, pi, li, o, i = key
        return net.pipelines[pi].layers[li].kernels[o][i].weights
    if kind == "mix":
        _, pi, li = key
        return net.pipelines[pi].layers[li].mix
    if kind == "flatten":
        _, pi, n = key
        return net.pipelines[pi].flatten[n].weights
    _, hi = key
    return net.head[hi]


def _grad_array(grads: GradientSet, key) -> np.ndarray:
    kind = key[0]
    if kind == "kernel":
        _, pi, li, o, i = key
        return grads.pipelines[pi].layers[li].kernels[o, i]
    if kind == "mix":
        _, pi, li = key
        return grads.pipelines[pi].layers[li].mix
    if kind == "flatten":
        _, pi, n = key
        return grads.pipelines[pi].flatten[n]
    _, hi = key
    return grads.head[hi]


def gradient_check(net: Network, input_t, target, config: TrainConfig,
                   h: float = 1e-5):
    """Compare every free parameter's analytic gradient to central differences.

    Returns ``(max_relative_error, n_parameters)`` with the relative error
    defined against ``max(|analytic|, |numeric|, 1e-8)``.
    """
    grads = backward(net, input_t, target, config)

    def f():
        from .network import forward
        return loss(forward(net, input_t), target, config.loss)

    worst = 0.0
    count = 0
    for _label, key, cells in _free_parameter_groups(net):
        arr = _param_array(net, key)
        garr = _grad_array(grads, key)
        analytic = float(sum(garr[r, c] for (r, c) in cells))
        for (r, c) in cells:
            arr[r, c] += h
        f_plus = f()
        for (r, c) in cells:
            arr[r, c] -= 2 * h
        f_minus = f()
        for (r, c) in cells:
            arr[r, c] += h
        numeric = (f_plus - f_minus) / (2 * h)
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, rel)
        count += 1
    return worst, count


def clone_network(net: Network) -> Network:
    """Deep structural copy with independent weight arrays."""
    return copy.deepcopy(net)
