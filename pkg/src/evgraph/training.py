"""Desk-scale training: exact manual gradients, Adam, and loss functions.

Backpropagation follows the forward's routing decisions: the featurewise
max of each conv layer sends its gradient to the cached argmax message
(ties were broken to the lowest column at forward time), window max
pooling to the cached argmax event, and the GRU runs ordinary
backpropagation through time across windows.  Gradients are exact for
the real-mode network; batch norm layers are treated as folded
constants.

The keyword loss is a weighted sum over windows: a per-window binary
cross entropy on the confidence output (positives upweighted to counter
the one-hot class imbalance across windows) plus the class cross
entropy evaluated at the single most-confident window, scaled by a
constant.  The classification loss is plain cross entropy on the pooled
prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .events import Burst, SynthSpec, synth_stream
from .graph import GraphGenConfig
from .model import (
    ClassifierNet,
    GraphArrays,
    KwsNet,
    build_graph_arrays,
    classifier_batch,
    kws_batch,
)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class LossConfig:
    conf_pos_weight: float = 99.0  # positive window upweight in the BCE
    cls_scale: float = 5.0  # class CE multiplier at the peak window
    target_placement: str = "end"  # where the positive window sits


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 2e-4
    weight_decay: float = 1e-4
    batch_size: int = 16
    seed: int = 0
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    checkpoint_metric: str = "train_loss"  # or "eval_loss"


def loss_classification(probs: np.ndarray, label: int):
    """Cross entropy and its gradient with respect to the logits."""
    loss = -math.log(max(float(probs[label]), 1e-12))
    grad = probs.copy()
    grad[label] -= 1.0
    return loss, grad


def loss_kws(conf: np.ndarray, probs: np.ndarray, target_window: int, label: int,
             cfg: LossConfig):
    """Weighted BCE over all windows plus scaled CE at the peak window.

    Returns (loss, grad wrt confidence logits (W,), grad wrt class
    logits (W, C), peak window).  The peak is treated as a constant of
    the backward pass.
    """
    w = cfg.conf_pos_weight
    y = np.zeros(conf.shape[0])
    y[target_window] = 1.0
    c = np.clip(conf, 1e-12, 1.0 - 1e-12)
    loss_conf = float(-(w * y * np.log(c) + (1.0 - y) * np.log(1.0 - c)).sum())
    grad_conf = w * y * (conf - 1.0) + (1.0 - y) * conf
    t_star = int(np.argmax(conf))  # earliest window on ties
    p = probs[t_star]
    loss_cls = -cfg.cls_scale * math.log(max(float(p[label]), 1e-12))
    grad_cls = np.zeros_like(probs)
    grad_cls[t_star] = p.copy()
    grad_cls[t_star, label] -= 1.0
    grad_cls[t_star] *= cfg.cls_scale
    return loss_conf + loss_cls, grad_conf, grad_cls, t_star


class Adam:
    """Adam with decoupled-nothing: weight decay is added to the gradient
    (plain L2), matching the reference training recipe."""

    def __init__(self, params: list[np.ndarray], lr: float = 2e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if self.weight_decay:
                g = g + self.weight_decay * p
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class ReduceLROnPlateau:
    """Halve (by `factor`) the optimizer's lr after `patience` consecutive
    epochs without metric improvement."""

    def __init__(self, opt: Adam, factor: float = 0.5, patience: int = 10,
                 min_lr: float = 0.0):
        self.opt = opt
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = math.inf
        self.wait = 0

    def step(self, metric: float) -> None:
        if metric < self.best:
            self.best = metric
            self.wait = 0
            return
        self.wait += 1
        if self.wait >= self.patience:
            self.opt.lr = max(self.opt.lr * self.factor, self.min_lr)
            self.wait = 0


# ---------------------------------------------------------------------------
# backward passes


def classifier_param_list(net: ClassifierNet) -> list[np.ndarray]:
    params = []
    for c in net.convs:
        params += [c.weight, c.bias]
    for l in net.fc.layers:
        params += [l.weight, l.bias]
    return params


def kws_param_list(net: KwsNet) -> list[np.ndarray]:
    params = []
    for c in net.convs:
        params += [c.weight, c.bias]
    for l in net.head.stem.layers:
        params += [l.weight, l.bias]
    g = net.head.gru
    params += [g.w_z, g.u_z, g.b_z, g.w_r, g.u_r, g.b_r, g.w_h, g.u_h, g.b_h]
    params += [net.head.cls.weight, net.head.cls.bias,
               net.head.conf.weight, net.head.conf.bias]
    return params


def _conv_stack_backward(ga: GraphArrays, convs, conv_caches, grad_feats: np.ndarray):
    """Gradient of the conv stack given d(loss)/d(final features).

    Returns ([(gW, gb) per layer, first to last], unused input grad)."""
    grads = [None] * len(convs)
    g = grad_feats
    for li in range(len(convs) - 1, -1, -1):
        layer, cache = convs[li], conv_caches[li]
        if layer.bn is not None:
            raise ValueError("training expects batch norm already folded")
        d = layer.in_dim
        g_pre = g * cache.relu_mask
        gb = g_pre.sum(axis=0)
        n, out = g_pre.shape
        idx = np.arange(n)[:, None]
        chosen_nbr = np.take_along_axis(ga.nbr, cache.argmax, axis=1)  # (n, out)
        chosen_pn = ga.pn[idx, cache.argmax]  # (n, out, 2)
        chosen_x = cache.x_in[chosen_nbr]  # (n, out, d)
        gw_feat = np.einsum("no,nod->od", g_pre, chosen_x)
        gw_pn = np.einsum("no,nop->op", g_pre, chosen_pn)
        gw = np.concatenate([gw_feat, gw_pn], axis=1)
        grads[li] = (gw, gb)
        if li > 0:
            g_prev = np.zeros_like(cache.x_in)
            contrib = g_pre[:, :, None] * layer.weight[None, :, :d]
            np.add.at(g_prev, chosen_nbr.ravel(), contrib.reshape(n * out, d))
            g = g_prev
    return grads


def classifier_backward(ga: GraphArrays, net: ClassifierNet, cache: dict,
                        grad_logits: np.ndarray) -> list[np.ndarray]:
    """Gradients in classifier_param_list order."""
    fc1, fc2 = net.fc.layers
    fc_cache = cache["fc"]
    h1 = fc_cache.x_in[1]  # hidden activations (second layer's input)
    g_w2 = np.outer(grad_logits, h1)
    g_b2 = grad_logits
    g_h1 = fc2.weight.T @ grad_logits
    g_h1 = g_h1 * fc_cache.relu_mask[0]
    pooled = fc_cache.x_in[0]
    g_w1 = np.outer(g_h1, pooled)
    g_b1 = g_h1
    g_pooled = fc1.weight.T @ g_h1
    if ga.n:
        grad_feats = np.repeat(g_pooled[None, :] / ga.n, ga.n, axis=0)
    else:
        grad_feats = np.zeros((0, net.feat_dim))
    conv_grads = _conv_stack_backward(ga, net.convs, cache["convs"], grad_feats)
    out = []
    for gw, gb in conv_grads:
        out += [gw, gb]
    out += [g_w1, g_b1, g_w2, g_b2]
    return out


def kws_backward(ga: GraphArrays, net: KwsNet, cache: dict,
                 grad_conf: np.ndarray, grad_cls: np.ndarray) -> list[np.ndarray]:
    """Gradients in kws_param_list order (BPTT over windows)."""
    head = net.head
    gru = head.gru
    gc = cache["gru"]
    num_windows = cache["num_windows"]
    h_out = gc.h_prev[1:] + [cache["h_final"]]
    zeros = np.zeros_like
    g_stem = [(zeros(l.weight), zeros(l.bias)) for l in head.stem.layers]
    gg = {name: zeros(getattr(gru, name))
          for name in ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h")}
    g_cls_w, g_cls_b = zeros(head.cls.weight), zeros(head.cls.bias)
    g_conf_w, g_conf_b = zeros(head.conf.weight), zeros(head.conf.bias)
    g_pooled = np.zeros_like(cache["pooled"])
    carry = np.zeros(gru.hidden)
    for w in range(num_windows - 1, -1, -1):
        h_w = h_out[w]
        g_cls_w += np.outer(grad_cls[w], h_w)
        g_cls_b += grad_cls[w]
        g_conf_w += grad_conf[w] * h_w[None, :]
        g_conf_b += np.array([grad_conf[w]])
        dh = head.cls.weight.T @ grad_cls[w] + head.conf.weight[0] * grad_conf[w] + carry
        x, h_prev = gc.x[w], gc.h_prev[w]
        z, r, h_cand = gc.z[w], gc.r[w], gc.h_cand[w]
        dz = dh * (h_cand - h_prev)
        dhc = dh * z
        dh_prev = dh * (1.0 - z)
        dhc_pre = dhc * (1.0 - h_cand * h_cand)
        gg["w_h"] += np.outer(dhc_pre, x)
        gg["u_h"] += np.outer(dhc_pre, r * h_prev)
        gg["b_h"] += dhc_pre
        drh = gru.u_h.T @ dhc_pre
        dr = drh * h_prev
        dh_prev += drh * r
        dz_pre = dz * z * (1.0 - z)
        dr_pre = dr * r * (1.0 - r)
        gg["w_z"] += np.outer(dz_pre, x)
        gg["u_z"] += np.outer(dz_pre, h_prev)
        gg["b_z"] += dz_pre
        gg["w_r"] += np.outer(dr_pre, x)
        gg["u_r"] += np.outer(dr_pre, h_prev)
        gg["b_r"] += dr_pre
        dx = gru.w_z.T @ dz_pre + gru.w_r.T @ dr_pre + gru.w_h.T @ dhc_pre
        carry = dh_prev + gru.u_z.T @ dz_pre + gru.u_r.T @ dr_pre
        # stem backward for this window
        sc = cache["stem"][w]
        g = dx
        for li in range(len(head.stem.layers) - 1, -1, -1):
            layer = head.stem.layers[li]
            g = g * sc.relu_mask[li]
            gw, gb = g_stem[li]
            gw += np.outer(g, sc.x_in[li])
            gb += g
            g = layer.weight.T @ g
        g_pooled[w] = g
    # route pooled-window grads to their argmax events, featurewise
    grad_feats = np.zeros((ga.n, net.feat_dim))
    arg_event = cache["arg_event"]
    for w in range(num_windows):
        sel = arg_event[w]
        valid = np.nonzero(sel >= 0)[0]
        if valid.size:
            np.add.at(grad_feats, (sel[valid], valid), g_pooled[w, valid])
    conv_grads = _conv_stack_backward(ga, net.convs, cache["convs"], grad_feats)
    out = []
    for gw, gb in conv_grads:
        out += [gw, gb]
    for gw, gb in g_stem:
        out += [gw, gb]
    out += [gg["w_z"], gg["u_z"], gg["b_z"], gg["w_r"], gg["u_r"], gg["b_r"],
            gg["w_h"], gg["u_h"], gg["b_h"]]
    out += [g_cls_w, g_cls_b, g_conf_w, g_conf_b]
    return out


# ---------------------------------------------------------------------------
# training loops


def evaluate_classifier(net: ClassifierNet, samples) -> tuple[float, float]:
    """(accuracy, mean loss) over (events-or-GraphArrays, label) pairs."""
    correct = 0
    losses = []
    for sample, label in samples:
        ga = sample if isinstance(sample, GraphArrays) else build_graph_arrays(sample, net.graph_cfg)
        probs, _ = classifier_batch(ga, net)
        loss, _ = loss_classification(probs, label)
        losses.append(loss)
        correct += int(np.argmax(probs)) == label
    n = max(len(losses), 1)
    return correct / n, float(np.mean(losses)) if losses else math.inf


def _snapshot(params: list[np.ndarray]) -> list[np.ndarray]:
    return [p.copy() for p in params]


def _restore(params: list[np.ndarray], snap: list[np.ndarray]) -> None:
    for p, s in zip(params, snap):
        p[...] = s


def train_classifier(net: ClassifierNet, train_samples, cfg: TrainConfig,
                     eval_samples=None) -> dict:
    """Mini-batch training; mutates `net`, keeps the best-metric epoch.

    Samples are (events, label) pairs; graphs are built once up front.
    Returns a history dict with per-epoch losses, accuracies, and lr.
    """
    data = [(build_graph_arrays(ev, net.graph_cfg), label) for ev, label in train_samples]
    params = classifier_param_list(net)
    opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    sched = ReduceLROnPlateau(opt, cfg.plateau_factor, cfg.plateau_patience)
    rng = np.random.default_rng(cfg.seed)
    history = {"train_loss": [], "train_acc": [], "eval_loss": [], "eval_acc": [], "lr": []}
    best = (math.inf, None)
    for _epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        losses = []
        correct = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            grads = None
            for i in batch:
                ga, label = data[i]
                probs, cache = classifier_batch(ga, net, want_cache=True)
                loss, grad_logits = loss_classification(probs, label)
                losses.append(loss)
                correct += int(np.argmax(probs)) == label
                g = classifier_backward(ga, net, cache, grad_logits)
                grads = g if grads is None else [a + b for a, b in zip(grads, g)]
            opt.step([g / len(batch) for g in grads])
        train_loss = float(np.mean(losses))
        if not math.isfinite(train_loss):
            raise TrainingDiverged(f"train loss {train_loss} at epoch {_epoch}")
        history["train_loss"].append(train_loss)
        history["train_acc"].append(correct / len(data))
        if eval_samples is not None:
            eval_acc, eval_loss = evaluate_classifier(net, eval_samples)
            history["eval_loss"].append(eval_loss)
            history["eval_acc"].append(eval_acc)
        history["lr"].append(opt.lr)
        metric = train_loss if cfg.checkpoint_metric == "train_loss" or eval_samples is None \
            else history["eval_loss"][-1]
        sched.step(metric)
        if metric < best[0]:
            best = (metric, _snapshot(params))
    if best[1] is not None:
        _restore(params, best[1])
    history["best_metric"] = best[0]
    return history


def train_kws(net: KwsNet, train_samples, cfg: TrainConfig, loss_cfg: LossConfig,
              eval_samples=None) -> dict:
    """KWS training; samples are (events, duration_us, target_window, label)."""
    data = [(build_graph_arrays(ev, net.graph_cfg), dur, tw, label)
            for ev, dur, tw, label in train_samples]
    params = kws_param_list(net)
    opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    sched = ReduceLROnPlateau(opt, cfg.plateau_factor, cfg.plateau_patience)
    rng = np.random.default_rng(cfg.seed)
    history = {"train_loss": [], "lr": []}
    best = (math.inf, None)
    for _epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            grads = None
            for i in batch:
                ga, dur, target_w, label = data[i]
                conf, probs, cache = kws_batch(ga, dur, net, want_cache=True)
                loss, g_conf, g_cls, _ = loss_kws(conf, probs, target_w, label, loss_cfg)
                losses.append(loss)
                g = kws_backward(ga, net, cache, g_conf, g_cls)
                grads = g if grads is None else [a + b for a, b in zip(grads, g)]
            opt.step([g / len(batch) for g in grads])
        train_loss = float(np.mean(losses))
        if not math.isfinite(train_loss):
            raise TrainingDiverged(f"train loss {train_loss} at epoch {_epoch}")
        history["train_loss"].append(train_loss)
        history["lr"].append(opt.lr)
        sched.step(train_loss)
        if train_loss < best[0]:
            best = (train_loss, _snapshot(params))
    if best[1] is not None:
        _restore(params, best[1])
    history["best_metric"] = best[0]
    return history


# ---------------------------------------------------------------------------
# synthetic two-class dataset for desk-scale verification


TOY_GRAPH_CFG = GraphGenConfig(num_channels=64, r_ch=16, skip=8, r_t_us=50_000)


def make_toy_classification(n_train: int, n_test: int, seed: int = 0,
                            duration_us: int = 1_000_000):
    """Two burst classes separated in time and channel, plus noise.

    Returns (train, test) lists of (events, label) with a deterministic
    split; use TOY_GRAPH_CFG to process them.
    """
    rng = np.random.default_rng(seed)
    nc = TOY_GRAPH_CFG.num_channels

    def sample(label: int, sample_seed: int):
        if label == 0:
            t_c = rng.integers(250_000, 400_000)
            ch_c = rng.integers(12, 22)
        else:
            t_c = rng.integers(600_000, 750_000)
            ch_c = rng.integers(42, 52)
        spec = SynthSpec(
            num_channels=nc, duration_us=duration_us,
            bursts=[Burst(int(t_c), int(ch_c), spread=30_000.0, count=100)],
            background_count=15, label=label, seed=sample_seed,
        )
        _, events, _ = synth_stream(spec)
        return events, label

    total = n_train + n_test
    samples = [sample(i % 2, 10_000 + i) for i in range(total)]
    return samples[:n_train], samples[n_train:]
