"""Model assembly: streaming inference, vectorized forward, calibration,
and the weights-file format.

Two network kinds share the four-layer graph-conv feature extractor:
a classifier (global average pool + two-layer MLP) and a keyword
spotter (windowed max pool + stem/GRU/projection head).  The streaming
paths process one event at a time exactly like the hardware pipeline;
the batch paths vectorize whole streams for calibration and training
and must agree with streaming to float precision.

Calibration runs the real-mode batch forward over sample streams,
records per-tensor ranges, and attaches integer records everywhere.
Activation domains are chained, not free: a conv layer's output domain
is widened to contain [0, 1] whenever the next layer concatenates
positional pairs into the same vector, the pooled feature stays in the
final conv domain, and the GRU hidden state lives in a fixed
tanh-shaped domain.  That way codes flow between stages without extra
requantization steps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .conv import ConvLayerParams, FeatureStore, conv_forward
from .events import Event
from .graph import ContextMemory, GraphGenConfig, process_event
from .heads import (
    GruGateQuant,
    GruParams,
    GruQuant,
    KwsOutput,
    KwsParams,
    LinearParams,
    MlpParams,
    classify,
    kws_init_state,
    kws_step,
    softmax,
)
from .pooling import AvgAccumulator, WindowFeature, WindowMaxPooler
from .quant import (
    SIGMOID_OUT,
    TANH_OUT,
    BatchNormParams,
    Calibration,
    LinearQuant,
    QuantParams,
    RequantParams,
    dequantize,
    make_lut,
    quantize,
    requant_from_factor,
    sigmoid,
)

MODEL_FORMAT = "evgraph-model-v1"


@dataclass
class ClassifierNet:
    graph_cfg: GraphGenConfig
    convs: list[ConvLayerParams]
    fc: MlpParams
    num_classes: int

    @property
    def feat_dim(self) -> int:
        return self.convs[-1].out_dim


@dataclass
class KwsNet:
    graph_cfg: GraphGenConfig
    convs: list[ConvLayerParams]
    head: KwsParams
    delta_t_us: int
    num_classes: int

    @property
    def feat_dim(self) -> int:
        return self.convs[-1].out_dim


def _he(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / in_dim), size=(out_dim, in_dim))


def init_classifier(graph_cfg: GraphGenConfig, conv_dims, fc_hidden: int,
                    num_classes: int, seed: int = 0) -> ClassifierNet:
    rng = np.random.default_rng(seed)
    convs, d = [], 2
    for out in conv_dims:
        convs.append(ConvLayerParams(_he(rng, out, d + 2), np.zeros(out)))
        d = out
    fc = MlpParams([
        LinearParams(_he(rng, fc_hidden, d), np.zeros(fc_hidden)),
        LinearParams(_he(rng, num_classes, fc_hidden), np.zeros(num_classes)),
    ])
    return ClassifierNet(graph_cfg, convs, fc, num_classes)


def init_kws(graph_cfg: GraphGenConfig, conv_dims, stem_dims, hidden: int,
             num_classes: int, delta_t_us: int, seed: int = 0) -> KwsNet:
    rng = np.random.default_rng(seed)
    convs, d = [], 2
    for out in conv_dims:
        convs.append(ConvLayerParams(_he(rng, out, d + 2), np.zeros(out)))
        d = out
    stem_layers = []
    for out in stem_dims:
        stem_layers.append(LinearParams(_he(rng, out, d), np.zeros(out)))
        d = out
    # recurrent matrices get the smaller Xavier-style scale to keep the
    # gates responsive at initialization
    def rec(shape_out, shape_in):
        return rng.normal(0.0, np.sqrt(1.0 / shape_in), size=(shape_out, shape_in))

    gru = GruParams(
        w_z=rec(hidden, d), u_z=rec(hidden, hidden), b_z=np.zeros(hidden),
        w_r=rec(hidden, d), u_r=rec(hidden, hidden), b_r=np.zeros(hidden),
        w_h=rec(hidden, d), u_h=rec(hidden, hidden), b_h=np.zeros(hidden),
    )
    head = KwsParams(
        stem=MlpParams(stem_layers, relu_after_last=True),
        gru=gru,
        cls=LinearParams(_he(rng, num_classes, hidden), np.zeros(num_classes)),
        conf=LinearParams(_he(rng, 1, hidden), np.zeros(1)),
    )
    return KwsNet(graph_cfg, convs, head, delta_t_us, num_classes)


# ---------------------------------------------------------------------------
# streaming inference


def _make_stores(net, mode: str) -> list[FeatureStore]:
    stores = []
    for layer in net.convs:
        zp = layer.quant.in_qp.zero_point if (mode != "real" and layer.quant) else 0
        stores.append(FeatureStore(net.graph_cfg.num_channels, layer.in_dim, mode, zp))
    return stores


def stream_features(events, net, mode: str = "real"):
    """Per-event features after the last conv layer, in arrival order.

    Yields (vertex, feature) pairs; features are codes in int mode.
    """
    cfg = net.graph_cfg
    mem = ContextMemory(cfg.num_channels)
    stores = _make_stores(net, mode)
    in_qp0 = None
    if mode != "real":
        if net.convs[0].quant is None:
            raise ValueError("model has no quantization record; run calibration first")
        in_qp0 = net.convs[0].quant.in_qp
    for ev in events:
        vertex = process_event(ev, mem, cfg)
        if mode == "real":
            x = vertex.feat
        elif mode == "int":
            x = quantize(vertex.feat, in_qp0)
        else:
            x = dequantize(quantize(vertex.feat, in_qp0), in_qp0)
        for layer, store in zip(net.convs, stores):
            x = conv_forward(vertex, x, store, layer, cfg, mode)
        yield vertex, x


def classify_stream(events, net: ClassifierNet, mode: str = "real") -> np.ndarray:
    """Whole-stream class probabilities via running average pooling."""
    qp = net.convs[-1].quant.out_qp if (mode != "real" and net.convs[-1].quant) else None
    acc = AvgAccumulator(net.feat_dim, mode, qp)
    for _, x in stream_features(events, net, mode):
        acc.add(x)
    return classify(acc.finalize(), net.fc, mode)


def kws_stream(events, duration_us: int, net: KwsNet, mode: str = "real") -> list[KwsOutput]:
    """One KwsOutput per delta_t window over the stream's duration."""
    qp = net.convs[-1].quant.out_qp if (mode != "real" and net.convs[-1].quant) else None
    pooler = WindowMaxPooler(net.feat_dim, net.delta_t_us, duration_us, mode, qp)
    state = kws_init_state(net.head, mode)
    outputs = []
    for vertex, x in stream_features(events, net, mode):
        for win in pooler.push(vertex.t, x):
            out, state = kws_step(win, state, net.head, mode)
            outputs.append(out)
    for win in pooler.finish():
        out, state = kws_step(win, state, net.head, mode)
        outputs.append(out)
    return outputs


# ---------------------------------------------------------------------------
# vectorized whole-stream forward (training and calibration)


@dataclass
class GraphArrays:
    """A stream's graph flattened for vectorized processing: per event a
    fixed-width message table (self-loop in column 0, then edges in
    ascending channel order), with `nbr` indexing the source event of
    each message and `mask` marking real columns."""

    n: int
    t: np.ndarray  # (n,)
    ch: np.ndarray  # (n,)
    feat0: np.ndarray  # (n, 2)
    nbr: np.ndarray  # (n, E) event index per message
    pn: np.ndarray  # (n, E, 2) positional pairs
    mask: np.ndarray  # (n, E) valid-message flags
    edge_counts: np.ndarray  # (n,) edges per event (self-loop excluded)


def build_graph_arrays(events, cfg: GraphGenConfig) -> GraphArrays:
    from .conv import positional_norm

    n = len(events)
    width = cfg.max_edge + 1
    t = np.array([ev.t for ev in events], dtype=np.int64)
    ch = np.array([ev.ch for ev in events], dtype=np.int64)
    feat0 = np.zeros((n, 2))
    nbr = np.zeros((n, width), dtype=np.int64)
    pn = np.zeros((n, width, 2))
    mask = np.zeros((n, width), dtype=bool)
    edge_counts = np.zeros(n, dtype=np.int64)
    mem = ContextMemory(cfg.num_channels)
    idx_mem = np.full(cfg.num_channels, -1, dtype=np.int64)
    for i, ev in enumerate(events):
        vertex = process_event(ev, mem, cfg)
        feat0[i] = vertex.feat
        nbr[i, 0] = i
        pn[i, 0] = (0.5, 0.0)
        mask[i, 0] = True
        for col, (ch_j, t_j) in enumerate(vertex.edges, start=1):
            nbr[i, col] = idx_mem[ch_j]
            p_ch, p_t = positional_norm(ch_j - ev.ch, t_j - ev.t, cfg)
            pn[i, col] = (p_ch, p_t)
            mask[i, col] = True
        edge_counts[i] = len(vertex.edges)
        idx_mem[ev.ch] = i
    return GraphArrays(n, t, ch, feat0, nbr, pn, mask, edge_counts)


@dataclass
class ConvCache:
    x_in: np.ndarray  # (n, d_in) layer input
    argmax: np.ndarray  # (n, out) winning message column per output feature
    relu_mask: np.ndarray  # (n, out) positive pre-activations


def extractor_batch(ga: GraphArrays, convs, want_cache: bool = False):
    """All conv layers over a whole stream at once (real mode).

    Matches the streaming path because messages only read same-layer
    inputs of strictly earlier events, which the gather reproduces.
    """
    x = ga.feat0
    caches = []
    neg_inf = -np.inf
    for layer in convs:
        w, b = layer.folded()
        d = layer.in_dim
        msgs = ga.pn @ w[:, d:].T + b
        msgs += np.einsum("ned,od->neo", x[ga.nbr], w[:, :d])
        msgs = np.where(ga.mask[:, :, None], msgs, neg_inf)
        argmax = msgs.argmax(axis=1)
        pre = np.take_along_axis(msgs, argmax[:, None, :], axis=1)[:, 0, :]
        out = np.maximum(pre, 0.0)
        if want_cache:
            caches.append(ConvCache(x, argmax, pre > 0.0))
        x = out
    return (x, caches) if want_cache else (x, None)


@dataclass
class MlpCache:
    x_in: list[np.ndarray]
    relu_mask: list[np.ndarray]


def mlp_batch(x, mlp: MlpParams, want_cache: bool = False):
    cache = MlpCache([], []) if want_cache else None
    for i, layer in enumerate(mlp.layers):
        relu = mlp.relu_after_last or i < len(mlp.layers) - 1
        if want_cache:
            cache.x_in.append(x)
        pre = x @ layer.weight.T + layer.bias if x.ndim > 1 else layer.weight @ x + layer.bias
        if relu:
            if want_cache:
                cache.relu_mask.append(pre > 0.0)
            x = np.maximum(pre, 0.0)
        else:
            if want_cache:
                cache.relu_mask.append(None)
            x = pre
    return x, cache


def classifier_batch(ga: GraphArrays, net: ClassifierNet, want_cache: bool = False):
    feats, conv_caches = extractor_batch(ga, net.convs, want_cache)
    pooled = feats.mean(axis=0) if ga.n else np.zeros(net.feat_dim)
    logits, fc_cache = mlp_batch(pooled, net.fc, want_cache)
    probs = softmax(logits)
    if not want_cache:
        return probs, None
    return probs, {"convs": conv_caches, "fc": fc_cache, "pooled": pooled,
                   "feats": feats, "logits": logits}


@dataclass
class GruCache:
    x: list[np.ndarray]
    h_prev: list[np.ndarray]
    z: list[np.ndarray]
    r: list[np.ndarray]
    h_cand: list[np.ndarray]


def kws_batch(ga: GraphArrays, duration_us: int, net: KwsNet, want_cache: bool = False):
    """Whole-stream KWS forward (real mode): window max pool, then the
    head sequentially over windows.  Returns (conf (W,), probs (W, C))."""
    feats, conv_caches = extractor_batch(ga, net.convs, want_cache)
    dim = net.feat_dim
    num_windows = max(1, -(-duration_us // net.delta_t_us))
    win_of = np.minimum(ga.t // net.delta_t_us, num_windows - 1) if ga.n else np.zeros(0, np.int64)
    pooled = np.zeros((num_windows, dim))
    arg_event = np.full((num_windows, dim), -1, dtype=np.int64)
    for w in range(num_windows):
        sel = np.nonzero(win_of == w)[0]
        if sel.size:
            sub = feats[sel]
            a = sub.argmax(axis=0)
            pooled[w] = sub[a, np.arange(dim)]
            arg_event[w] = sel[a]
    head = net.head
    h = np.zeros(head.gru.hidden)
    conf = np.zeros(num_windows)
    probs = np.zeros((num_windows, net.num_classes))
    stem_caches = []
    gru_cache = GruCache([], [], [], [], []) if want_cache else None
    for w in range(num_windows):
        x, sc = mlp_batch(pooled[w], head.stem, want_cache)
        z = sigmoid(head.gru.w_z @ x + head.gru.u_z @ h + head.gru.b_z)
        r = sigmoid(head.gru.w_r @ x + head.gru.u_r @ h + head.gru.b_r)
        h_cand = np.tanh(head.gru.w_h @ x + head.gru.u_h @ (r * h) + head.gru.b_h)
        h_next = (1.0 - z) * h + z * h_cand
        if want_cache:
            stem_caches.append(sc)
            gru_cache.x.append(x)
            gru_cache.h_prev.append(h)
            gru_cache.z.append(z)
            gru_cache.r.append(r)
            gru_cache.h_cand.append(h_cand)
        h = h_next
        logits = head.cls.weight @ h + head.cls.bias
        probs[w] = softmax(logits)
        conf[w] = sigmoid(head.conf.weight @ h + head.conf.bias)[0]
    if not want_cache:
        return conf, probs, None
    return conf, probs, {
        "convs": conv_caches, "feats": feats, "pooled": pooled,
        "arg_event": arg_event, "stem": stem_caches, "gru": gru_cache,
        "win_of": win_of, "num_windows": num_windows, "h_final": h,
    }


# ---------------------------------------------------------------------------
# calibration: attach integer records to a trained network


def _chain_conv_quant(net, conv_in0: Calibration, conv_outs: list[Calibration],
                      bits: int) -> QuantParams:
    """Build and attach conv LinearQuants; returns the last conv's output
    domain (the domain pooling keeps and the next stage consumes)."""
    in_qp = conv_in0.activation_params(bits, include=(0.0, 1.0))
    for i, layer in enumerate(net.convs):
        feeds_conv = i < len(net.convs) - 1
        include = (0.0, 1.0) if feeds_conv else (0.0,)
        out_qp = conv_outs[i].activation_params(bits, include=include)
        w, b = layer.folded()
        layer.quant = LinearQuant.build(w, b, in_qp, out_qp, bits)
        in_qp = out_qp
    return in_qp


def calibrate_classifier(net: ClassifierNet, calib_streams, bits: int = 8) -> ClassifierNet:
    """Observe real-mode ranges over calibration streams and attach
    integer records to every layer (weights from the folded network)."""
    conv_in0 = Calibration()
    conv_outs = [Calibration() for _ in net.convs]
    hidden_obs = Calibration()
    for events in calib_streams:
        ga = build_graph_arrays(events, net.graph_cfg)
        conv_in0.observe(ga.feat0)
        xs = _layer_outputs(ga, net.convs)
        for obs, vals in zip(conv_outs, xs):
            obs.observe(vals)
        pooled = xs[-1].mean(axis=0) if ga.n else np.zeros(net.feat_dim)
        hidden, _ = mlp_batch(pooled, MlpParams(net.fc.layers[:1], relu_after_last=True))
        hidden_obs.observe(hidden)
    feat_qp = _chain_conv_quant(net, conv_in0, conv_outs, bits)
    hidden_qp = hidden_obs.activation_params(bits, include=(0.0,))
    fc1, fc2 = net.fc.layers
    fc1.quant = LinearQuant.build(fc1.weight, fc1.bias, feat_qp, hidden_qp, bits)
    fc2.quant = LinearQuant.build(fc2.weight, fc2.bias, hidden_qp, None, bits)
    return net


def _layer_outputs(ga: GraphArrays, convs) -> list[np.ndarray]:
    outs = []
    x = ga.feat0
    for layer in convs:
        w, b = layer.folded()
        d = layer.in_dim
        msgs = ga.pn @ w[:, d:].T + b
        msgs += np.einsum("ned,od->neo", x[ga.nbr], w[:, :d])
        msgs = np.where(ga.mask[:, :, None], msgs, -np.inf)
        x = np.maximum(msgs.max(axis=1), 0.0)
        outs.append(x)
    return outs


def calibrate_kws(net: KwsNet, calib_streams, durations, bits: int = 8) -> KwsNet:
    """Classifier-style conv calibration plus the head's LUT domains."""
    if bits != 8:
        raise ValueError("kws head supports 8-bit codes only "
                         "(256-entry activation tables)")
    conv_in0 = Calibration()
    conv_outs = [Calibration() for _ in net.convs]
    stem_obs = [Calibration() for _ in net.head.stem.layers]
    pre_obs = {g: Calibration() for g in ("z", "r", "h")}
    conf_obs = Calibration()
    gru = net.head.gru
    for events, duration_us in zip(calib_streams, durations):
        ga = build_graph_arrays(events, net.graph_cfg)
        conv_in0.observe(ga.feat0)
        xs = _layer_outputs(ga, net.convs)
        for obs, vals in zip(conv_outs, xs):
            obs.observe(vals)
        _, _, cache = kws_batch(ga, duration_us, net, want_cache=True)
        gc: GruCache = cache["gru"]
        for w, x in enumerate(gc.x):
            h_prev = gc.h_prev[w]
            pre_obs["z"].observe(gru.w_z @ x + gru.u_z @ h_prev + gru.b_z)
            pre_obs["r"].observe(gru.w_r @ x + gru.u_r @ h_prev + gru.b_r)
            pre_obs["h"].observe(gru.w_h @ x + gru.u_h @ (gc.r[w] * h_prev) + gru.b_h)
        for vals, obs in zip(_stem_intermediate(cache["pooled"], net.head.stem), stem_obs):
            obs.observe(vals)
        h_outs = gc.h_prev[1:] + [cache["h_final"]]
        for h in h_outs:
            conf_obs.observe(net.head.conf.weight @ h + net.head.conf.bias)
    feat_qp = _chain_conv_quant(net, conv_in0, conv_outs, bits)
    # stem: first layer consumes the pooled conv domain
    in_qp = feat_qp
    for layer, obs in zip(net.head.stem.layers, stem_obs):
        out_qp = obs.activation_params(bits, include=(0.0,))
        layer.quant = LinearQuant.build(layer.weight, layer.bias, in_qp, out_qp, bits)
        in_qp = out_qp
    x_qp = in_qp
    gates = {}
    for g, fn, out_dom in (("z", sigmoid, SIGMOID_OUT), ("r", sigmoid, SIGMOID_OUT),
                           ("h", np.tanh, TANH_OUT)):
        w_g, u_g, b_g = gru.wub(g)
        pre_qp = pre_obs[g].activation_params(bits, include=(0.0,))
        wq = LinearQuant.build(w_g, np.zeros(gru.hidden), x_qp, None, bits)
        uq = LinearQuant.build(u_g, b_g, TANH_OUT, None, bits)
        gates[g] = GruGateQuant(
            w=wq, u=uq, pre_qp=pre_qp,
            rq_w=requant_from_factor(wq.acc_scale / pre_qp.scale),
            rq_u=requant_from_factor(uq.acc_scale / pre_qp.scale),
            lut=make_lut(fn, pre_qp, out_dom),
        )
    gru.quant = GruQuant(x_qp=x_qp, gates=gates,
                         rq_had=requant_from_factor(1.0 / SIGMOID_OUT.code_max))
    head = net.head
    head.cls.quant = LinearQuant.build(head.cls.weight, head.cls.bias, TANH_OUT, None, bits)
    head.conf.quant = LinearQuant.build(head.conf.weight, head.conf.bias, TANH_OUT, None, bits)
    head.conf_pre_qp = conf_obs.activation_params(bits, include=(0.0,))
    head.conf_rq = requant_from_factor(head.conf.quant.acc_scale / head.conf_pre_qp.scale)
    head.conf_lut = make_lut(sigmoid, head.conf_pre_qp, SIGMOID_OUT)
    return net


def _stem_intermediate(pooled: np.ndarray, stem: MlpParams) -> list[np.ndarray]:
    """Per-layer ReLU outputs of the stem over all windows at once."""
    outs = []
    x = pooled
    for layer in stem.layers:
        x = np.maximum(x @ layer.weight.T + layer.bias, 0.0)
        outs.append(x)
    return outs


# ---------------------------------------------------------------------------
# weights file


def _qp_json(qp: QuantParams | None):
    if qp is None:
        return None
    return {"scale": qp.scale, "zero_point": qp.zero_point, "bits": qp.bits,
            "signed": qp.signed}


def _qp_load(d) -> QuantParams | None:
    return None if d is None else QuantParams(d["scale"], d["zero_point"], d["bits"], d["signed"])


def _lq_json(lq: LinearQuant | None):
    if lq is None:
        return None
    return {
        "in": _qp_json(lq.in_qp), "w": _qp_json(lq.w_qp),
        "w_codes": lq.w_codes.tolist(), "b_codes": lq.b_codes.tolist(),
        "out": _qp_json(lq.out_qp),
    }


def _lq_load(d) -> LinearQuant | None:
    if d is None:
        return None
    in_qp, out_qp = _qp_load(d["in"]), _qp_load(d["out"])
    w_qp = _qp_load(d["w"])
    rq = requant_from_factor(in_qp.scale * w_qp.scale / out_qp.scale) if out_qp else None
    acc_bits = 32 if max(in_qp.bits, w_qp.bits) <= 8 else 64
    return LinearQuant(in_qp, w_qp, np.array(d["w_codes"], dtype=np.int64),
                       np.array(d["b_codes"], dtype=np.int64), out_qp, rq, acc_bits)


def _bn_json(bn: BatchNormParams | None):
    if bn is None:
        return None
    return {"gamma": bn.gamma.tolist(), "beta": bn.beta.tolist(),
            "mean": bn.mean.tolist(), "var": bn.var.tolist(), "eps": bn.eps}


def _bn_load(d) -> BatchNormParams | None:
    if d is None:
        return None
    return BatchNormParams(np.array(d["gamma"]), np.array(d["beta"]),
                           np.array(d["mean"]), np.array(d["var"]), d["eps"])


def _linear_json(layer: LinearParams):
    return {"weight": layer.weight.tolist(), "bias": layer.bias.tolist(),
            "quant": _lq_json(layer.quant)}


def _linear_load(d) -> LinearParams:
    return LinearParams(np.array(d["weight"]), np.array(d["bias"]), _lq_load(d["quant"]))


def _graph_json(cfg: GraphGenConfig):
    return {"num_channels": cfg.num_channels, "r_ch": cfg.r_ch, "skip": cfg.skip,
            "r_t_us": cfg.r_t_us, "t_norm_us": cfg.t_norm_us, "n_div": cfg.n_div}


def save_model(net, path) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "graph": _graph_json(net.graph_cfg),
        "num_classes": net.num_classes,
        "convs": [
            {"weight": c.weight.tolist(), "bias": c.bias.tolist(),
             "bn": _bn_json(c.bn), "quant": _lq_json(c.quant)}
            for c in net.convs
        ],
    }
    if isinstance(net, ClassifierNet):
        doc["kind"] = "classifier"
        doc["fc"] = {"layers": [_linear_json(l) for l in net.fc.layers]}
    elif isinstance(net, KwsNet):
        doc["kind"] = "kws"
        doc["delta_t_us"] = net.delta_t_us
        head = net.head
        gru = head.gru
        gru_doc = {name: getattr(gru, name).tolist()
                   for name in ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h")}
        if gru.quant is not None:
            gq = gru.quant
            gru_doc["quant"] = {
                "x_qp": _qp_json(gq.x_qp),
                "gates": {g: {"w": _lq_json(gate.w), "u": _lq_json(gate.u),
                              "pre_qp": _qp_json(gate.pre_qp)}
                          for g, gate in gq.gates.items()},
            }
        else:
            gru_doc["quant"] = None
        doc["head"] = {
            "stem": [_linear_json(l) for l in head.stem.layers],
            "gru": gru_doc,
            "cls": _linear_json(head.cls),
            "conf": _linear_json(head.conf),
            "conf_pre_qp": _qp_json(head.conf_pre_qp),
        }
    else:
        raise TypeError(f"cannot serialize {type(net).__name__}")
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_model(path):
    with open(path, "r", encoding="ascii") as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"not a model file (format {doc.get('format')!r})")
    cfg = GraphGenConfig(**doc["graph"])
    convs = [
        ConvLayerParams(np.array(c["weight"]), np.array(c["bias"]),
                        _bn_load(c["bn"]), _lq_load(c["quant"]))
        for c in doc["convs"]
    ]
    if doc["kind"] == "classifier":
        fc = MlpParams([_linear_load(l) for l in doc["fc"]["layers"]])
        return ClassifierNet(cfg, convs, fc, doc["num_classes"])
    if doc["kind"] != "kws":
        raise ValueError(f"unknown model kind {doc['kind']!r}")
    h = doc["head"]
    gd = h["gru"]
    gru = GruParams(**{name: np.array(gd[name])
                       for name in ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r",
                                    "w_h", "u_h", "b_h")})
    if gd["quant"] is not None:
        x_qp = _qp_load(gd["quant"]["x_qp"])
        gates = {}
        for g, fn, out_dom in (("z", sigmoid, SIGMOID_OUT), ("r", sigmoid, SIGMOID_OUT),
                               ("h", np.tanh, TANH_OUT)):
            gj = gd["quant"]["gates"][g]
            wq, uq = _lq_load(gj["w"]), _lq_load(gj["u"])
            pre_qp = _qp_load(gj["pre_qp"])
            gates[g] = GruGateQuant(
                w=wq, u=uq, pre_qp=pre_qp,
                rq_w=requant_from_factor(wq.acc_scale / pre_qp.scale),
                rq_u=requant_from_factor(uq.acc_scale / pre_qp.scale),
                lut=make_lut(fn, pre_qp, out_dom),
            )
        gru.quant = GruQuant(x_qp=x_qp, gates=gates,
                             rq_had=requant_from_factor(1.0 / SIGMOID_OUT.code_max))
    head = KwsParams(
        stem=MlpParams([_linear_load(l) for l in h["stem"]], relu_after_last=True),
        gru=gru,
        cls=_linear_load(h["cls"]),
        conf=_linear_load(h["conf"]),
        conf_pre_qp=_qp_load(h["conf_pre_qp"]),
    )
    if head.conf_pre_qp is not None:
        head.conf_rq = requant_from_factor(head.conf.quant.acc_scale / head.conf_pre_qp.scale)
        head.conf_lut = make_lut(sigmoid, head.conf_pre_qp, SIGMOID_OUT)
    return KwsNet(cfg, convs, head, doc["delta_t_us"], doc["num_classes"])

