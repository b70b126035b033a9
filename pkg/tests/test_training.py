import math

import numpy as np
import pytest

from conftest import burst_events
from evgraph.graph import GraphGenConfig
from evgraph.model import (
    build_graph_arrays,
    classifier_batch,
    init_classifier,
    init_kws,
    kws_batch,
)
from evgraph.training import (
    Adam,
    LossConfig,
    ReduceLROnPlateau,
    TrainConfig,
    TrainingDiverged,
    classifier_backward,
    classifier_param_list,
    evaluate_classifier,
    kws_backward,
    kws_param_list,
    loss_classification,
    loss_kws,
    make_toy_classification,
    train_classifier,
    train_kws,
)

G = GraphGenConfig(num_channels=32, r_ch=8, skip=4, r_t_us=80_000)


def _stream(seed):
    return burst_events(seed, 32, 500_000, 250_000, 16, 40_000, 60, background=10)


def test_loss_classification_closed_form():
    probs = np.full(10, 0.1)
    loss, grad = loss_classification(probs, 3)
    assert loss == pytest.approx(math.log(10))
    want = probs.copy()
    want[3] -= 1
    assert grad == pytest.approx(want)


def test_loss_kws_closed_form():
    cfg = LossConfig()  # pos weight 99, cls scale 5
    conf = np.full(100, 0.5)
    probs = np.full((100, 4), 0.25)
    loss, grad_conf, grad_cls, t_star = loss_kws(conf, probs, 7, 2, cfg)
    # conf: positive window 99*ln2, 99 negatives ln2 each; cls: 5*ln4 at peak
    assert loss == pytest.approx(198 * math.log(2) + 5 * math.log(4))
    assert t_star == 0  # all-equal confidences tie-break earliest
    want_conf = np.full(100, 0.5)
    want_conf[7] = 99 * (0.5 - 1.0)
    assert grad_conf == pytest.approx(want_conf)
    assert np.count_nonzero(grad_cls.sum(axis=1)) <= 1
    want_row = 5.0 * np.array([0.25, 0.25, -0.75, 0.25])
    assert grad_cls[0] == pytest.approx(want_row)
    assert grad_cls[1:].sum() == 0.0


def _fd_check(loss_fn, params, grads, rng, coords_per_param=2, eps=1e-5,
              rtol=1e-4):
    for p, g in zip(params, grads):
        for _ in range(coords_per_param):
            idx = tuple(rng.integers(0, s) for s in p.shape)
            old = p[idx]
            p[idx] = old + eps
            lp = loss_fn()
            p[idx] = old - eps
            lm = loss_fn()
            p[idx] = old
            fd = (lp - lm) / (2 * eps)
            an = g[idx]
            if abs(fd) < 1e-10 and abs(an) < 1e-10:
                continue
            assert abs(fd - an) / max(abs(fd), abs(an)) < rtol, (idx, fd, an)


def test_classifier_gradients_fd():
    rng = np.random.default_rng(0)
    for trial in range(3):
        net = init_classifier(G, (6, 8, 10, 12), 14, 3, seed=trial)
        ga = build_graph_arrays(_stream(40 + trial), G)
        label = trial % 3

        def loss_fn():
            probs, _ = classifier_batch(ga, net)
            return loss_classification(probs, label)[0]

        probs, cache = classifier_batch(ga, net, want_cache=True)
        _, dlogits = loss_classification(probs, label)
        grads = classifier_backward(ga, net, cache, dlogits)
        params = classifier_param_list(net)
        assert len(grads) == len(params) == 12
        _fd_check(loss_fn, params, grads, rng)


def test_kws_gradients_fd():
    rng = np.random.default_rng(1)
    lcfg = LossConfig()
    for trial in range(2):
        net = init_kws(G, (6, 8, 10, 12), (10, 10), 8, 3,
                       delta_t_us=100_000, seed=10 + trial)
        ga = build_graph_arrays(_stream(60 + trial), G)
        tw, label = 2 + trial, trial % 3

        def loss_fn():
            conf, probs, _ = kws_batch(ga, 500_000, net)
            return loss_kws(conf, probs, tw, label, lcfg)[0]

        conf, probs, cache = kws_batch(ga, 500_000, net, want_cache=True)
        _, gconf, gcls, _ = loss_kws(conf, probs, tw, label, lcfg)
        grads = kws_backward(ga, net, cache, gconf, gcls)
        params = kws_param_list(net)
        assert len(grads) == len(params) == 25
        _fd_check(loss_fn, params, grads, rng)


def test_adam_closed_form_two_steps():
    p = np.array([1.0])
    opt = Adam([p], lr=0.1, betas=(0.9, 0.999), eps=1e-8)
    g1, g2 = np.array([0.5]), np.array([-0.2])

    m = v = 0.0
    x = 1.0
    for t, g in enumerate([g1, g2], start=1):
        m = 0.9 * m + 0.1 * float(g[0])
        v = 0.999 * v + 0.001 * float(g[0]) ** 2
        mh = m / (1 - 0.9**t)
        vh = v / (1 - 0.999**t)
        x -= 0.1 * mh / (math.sqrt(vh) + 1e-8)
    opt.step([g1])
    opt.step([g2])
    assert p[0] == pytest.approx(x, rel=1e-12)


def test_adam_zero_lr_is_identity():
    p = np.array([3.0, -1.0])
    opt = Adam([p], lr=0.0)
    opt.step([np.array([5.0, 5.0])])
    assert p.tolist() == [3.0, -1.0]


def test_adam_weight_decay_in_gradient():
    # wd acts through the adaptive update, so one step moves by ~lr
    p = np.array([2.0])
    opt = Adam([p], lr=0.01, weight_decay=0.1)
    opt.step([np.zeros(1)])
    assert p[0] == pytest.approx(2.0 - 0.01, abs=1e-4)


def test_weight_decay_shrinks_norm_monotonically():
    p = np.array([2.0, -3.0])
    opt = Adam([p], lr=0.01, weight_decay=0.1)
    norms = [np.linalg.norm(p)]
    for _ in range(50):
        opt.step([np.zeros(2)])
        norms.append(np.linalg.norm(p))
    assert all(b < a for a, b in zip(norms, norms[1:]))


def test_plateau_scheduler():
    opt = Adam([np.zeros(1)], lr=1.0)
    sched = ReduceLROnPlateau(opt, factor=0.5, patience=2)
    sched.step(1.0)   # best
    sched.step(1.0)   # wait 1
    sched.step(1.0)   # wait 2 -> reduce
    assert opt.lr == 0.5
    sched.step(0.5)   # improvement resets
    sched.step(0.6)
    sched.step(0.6)
    assert opt.lr == 0.25
    sched2 = ReduceLROnPlateau(opt, factor=0.5, patience=1, min_lr=0.2)
    sched2.step(1.0)
    sched2.step(1.0)
    assert opt.lr == 0.2  # floor


def test_make_toy_classification():
    train, test = make_toy_classification(8, 4, seed=0)
    assert len(train) == 8 and len(test) == 4
    labels = [l for _, l in train]
    assert sorted(set(labels)) == [0, 1]
    assert labels.count(0) == labels.count(1)
    train2, _ = make_toy_classification(8, 4, seed=0)
    for (e1, l1), (e2, l2) in zip(train, train2):
        assert e1 == e2 and l1 == l2


def test_train_classifier_loss_decreases_and_deterministic():
    train, test = make_toy_classification(16, 8, seed=1)
    from evgraph.training import TOY_GRAPH_CFG
    cfg = TrainConfig(epochs=6, batch_size=8, seed=0)
    net1 = init_classifier(TOY_GRAPH_CFG, (8, 16, 32, 64), 64, 2, seed=0)
    h1 = train_classifier(net1, train, cfg, eval_samples=test)
    net2 = init_classifier(TOY_GRAPH_CFG, (8, 16, 32, 64), 64, 2, seed=0)
    h2 = train_classifier(net2, train, cfg, eval_samples=test)
    assert h1["train_loss"] == h2["train_loss"]
    assert h1["eval_acc"] == h2["eval_acc"]
    assert h1["train_loss"][-1] < h1["train_loss"][0]
    for a, b in zip(classifier_param_list(net1), classifier_param_list(net2)):
        assert np.array_equal(a, b)
    acc1, _ = evaluate_classifier(net1, test)
    assert acc1 == h1["eval_acc"][-1]


def test_train_classifier_divergence_raises():
    train, _ = make_toy_classification(4, 2, seed=2)
    from evgraph.training import TOY_GRAPH_CFG
    net = init_classifier(TOY_GRAPH_CFG, (8, 16, 32, 64), 64, 2, seed=0)
    cfg = TrainConfig(epochs=50, batch_size=4, seed=0, lr=1e80)
    with pytest.raises(TrainingDiverged):
        train_classifier(net, train, cfg)


def test_train_kws_runs_and_decreases():
    rng = np.random.default_rng(3)
    from evgraph.training import TOY_GRAPH_CFG
    samples = []
    for i in range(6):
        label = i % 2
        t_c = 300_000 if label == 0 else 650_000
        ch = 18 if label == 0 else 46
        ev = burst_events(900 + i, 64, 1_000_000, t_c, ch, 30_000, 120,
                          background=15)
        target = t_c // 100_000
        samples.append((ev, 1_000_000, target, label))
    net = init_kws(TOY_GRAPH_CFG, (8, 8, 8, 8), (8, 8), 8, 2,
                   delta_t_us=100_000, seed=0)
    cfg = TrainConfig(epochs=5, batch_size=3, seed=0)
    hist = train_kws(net, samples, cfg, LossConfig())
    assert len(hist["train_loss"]) == 5
    assert hist["train_loss"][-1] < hist["train_loss"][0]
    assert all(math.isfinite(x) for x in hist["train_loss"])
