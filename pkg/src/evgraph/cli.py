"""Command-line front end.

Subcommands: classify, kws, label, train, perf, eval.  Each takes a JSON
config file plus common flag overrides (--mode, --seed, --out, --workers,
and repeatable --set section.key=value).  Machine-readable outputs are
written with sorted keys and no timestamps, so reruns with the same
config and seed are byte-identical at any worker count: stream-level
work is distributed with an order-preserving pool map and metrics are
reduced sequentially in input order.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys

import numpy as np

from . import labeling, model, perf, training
from .events import read_stream
from .graph import GraphGenConfig

EXIT_CONFIG = 2


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        self.key = key
        super().__init__(f"{key}: {msg}")


def _load_config(path: str, overrides: list[str]) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(path, "config file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(path, f"invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(path, "top-level config must be an object")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "expected --set section.key=value")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(dotted, "override path crosses a non-object")
        node[parts[-1]] = value
    return cfg


def _section(cfg: dict, name: str, required: bool = True) -> dict:
    sec = cfg.get(name)
    if sec is None:
        if required:
            raise ConfigError(name, "missing config section")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(name, "must be an object")
    return sec


def _graph_cfg(section: dict, key: str = "graph") -> GraphGenConfig:
    try:
        return GraphGenConfig(**section)
    except TypeError as exc:
        raise ConfigError(key, str(exc)) from None
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None


def _resolve_inputs(cfg: dict, config_dir: str) -> list[str]:
    inputs = cfg.get("inputs")
    if inputs is None:
        raise ConfigError("inputs", "missing (list of stream paths or a manifest path)")
    if isinstance(inputs, str):
        manifest_path = os.path.join(config_dir, inputs) if not os.path.isabs(inputs) else inputs
        try:
            with open(manifest_path, "r", encoding="utf-8") as fh:
                manifest = json.load(fh)
        except OSError as exc:
            raise ConfigError("inputs", f"cannot read manifest: {exc}") from None
        entries = manifest.get("entries")
        if not isinstance(entries, list):
            raise ConfigError("inputs", "manifest has no 'entries' list")
        base = os.path.dirname(manifest_path)
        return [e["path"] if os.path.isabs(e["path"]) else os.path.join(base, e["path"])
                for e in entries]
    if not isinstance(inputs, list) or not all(isinstance(p, str) for p in inputs):
        raise ConfigError("inputs", "must be a list of paths or a manifest path")
    return [p if os.path.isabs(p) else os.path.join(config_dir, p) for p in inputs]


def _write_json(obj, path: str) -> None:
    with open(path, "w", encoding="ascii") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _jsonl_line(obj) -> str:
    return json.dumps(obj, sort_keys=True) + "\n"


def _map_streams(fn, items, workers: int):
    """Order-preserving map, parallel across processes when workers > 1."""
    if workers <= 1:
        return [fn(item) for item in items]
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# worker state for process pools (set once per worker via initializer)
_WORKER: dict = {}


def _init_infer_worker(model_path: str, mode: str) -> None:
    _WORKER["net"] = model.load_model(model_path)
    _WORKER["mode"] = mode


def _classify_one(path: str) -> dict:
    net, mode = _WORKER["net"], _WORKER["mode"]
    header, events = read_stream(path)
    probs = model.classify_stream(events, net, mode)
    return {
        "sample": os.path.basename(path),
        "label": header.label,
        "pred": int(np.argmax(probs)),
        "probs": [float(p) for p in probs],
    }


def _kws_one(arg) -> dict:
    path, labeler_kwargs, placement = arg
    net, mode = _WORKER["net"], _WORKER["mode"]
    header, events = read_stream(path)
    outputs = model.kws_stream(events, header.duration_us, net, mode)
    delta_ms = net.delta_t_us / 1000.0
    kwargs = dict(labeler_kwargs)
    kwargs.setdefault("min_duration_ms", max(40.0, delta_ms))
    lcfg = labeling.LabelerConfig(t_ms=header.duration_us / 1000.0,
                                  delta_t_ms=delta_ms, **kwargs)
    segment = labeling.extract_segment(events, lcfg)
    target = None
    if segment is not None:
        target = labeling.target_window(segment, len(outputs), placement)
    return {
        "sample": os.path.basename(path),
        "label": header.label,
        "target": target,
        "conf": [o.confidence for o in outputs],
        "pred": [int(np.argmax(o.class_probs)) for o in outputs],
        "peak": labeling.peak_window(outputs),
        "peak_probs": [float(p) for p in outputs[labeling.peak_window(outputs)].class_probs],
    }


def _parallel_infer(fn, items, workers: int, model_path: str, mode: str):
    if workers <= 1:
        _init_infer_worker(model_path, mode)
        return [fn(item) for item in items]
    with concurrent.futures.ProcessPoolExecutor(
            max_workers=workers, initializer=_init_infer_worker,
            initargs=(model_path, mode)) as pool:
        return list(pool.map(fn, items))


def _model_path(cfg: dict, config_dir: str) -> str:
    path = cfg.get("model")
    if not isinstance(path, str):
        raise ConfigError("model", "missing model file path")
    if not os.path.isabs(path):
        path = os.path.join(config_dir, path)
    if not os.path.exists(path):
        raise ConfigError("model", f"no such file: {path}")
    return path


def cmd_classify(cfg: dict, out_dir: str, config_dir: str) -> None:
    mode = cfg.get("mode", "real")
    model_path = _model_path(cfg, config_dir)
    paths = _resolve_inputs(cfg, config_dir)
    records = _parallel_infer(_classify_one, paths, int(cfg.get("workers", 1)),
                              model_path, mode)
    labeled = [r for r in records if r["label"] is not None]
    correct = sum(r["pred"] == r["label"] for r in labeled)
    metrics = {
        "num_samples": len(records),
        "num_labeled": len(labeled),
        "accuracy": correct / len(labeled) if labeled else None,
        "mode": mode,
    }
    with open(os.path.join(out_dir, "predictions.jsonl"), "w", encoding="ascii") as fh:
        fh.writelines(_jsonl_line(r) for r in records)
    _write_json(metrics, os.path.join(out_dir, "metrics.json"))
    print(f"classify: {len(records)} samples, accuracy "
          f"{metrics['accuracy'] if metrics['accuracy'] is not None else 'n/a'}")


def _kws_metrics(records: list[dict]) -> dict:
    acc_k = acc_kd = wer = labeled = targeted = 0
    for r in records:
        if r["label"] is None:
            continue
        labeled += 1
        hit = r["pred"][r["peak"]] == r["label"]
        acc_k += hit
        if r["target"] is not None:
            targeted += 1
            near = abs(r["peak"] - r["target"]) <= 1
            acc_kd += hit and near
            wer += near
    return {
        "num_samples": len(records),
        "num_labeled": labeled,
        "num_with_target": targeted,
        "acc_k": acc_k / labeled if labeled else None,
        "acc_k_delta": acc_kd / targeted if targeted else None,
        "word_end_rate": wer / targeted if targeted else None,
    }


def cmd_kws(cfg: dict, out_dir: str, config_dir: str) -> None:
    mode = cfg.get("mode", "real")
    model_path = _model_path(cfg, config_dir)
    paths = _resolve_inputs(cfg, config_dir)
    lab = dict(_section(cfg, "labeler", required=False))
    lab.pop("t_ms", None)
    lab.pop("delta_t_ms", None)
    placement = cfg.get("target_placement", "end")
    items = [(p, lab, placement) for p in paths]
    try:
        records = _parallel_infer(_kws_one, items, int(cfg.get("workers", 1)),
                                  model_path, mode)
    except ValueError as exc:
        raise ConfigError("labeler", str(exc)) from None
    metrics = _kws_metrics(records)
    metrics["mode"] = mode
    with open(os.path.join(out_dir, "predictions.jsonl"), "w", encoding="ascii") as fh:
        fh.writelines(_jsonl_line(r) for r in records)
    _write_json(metrics, os.path.join(out_dir, "metrics.json"))
    print(f"kws: {len(records)} samples, acc_k {metrics['acc_k']}, "
          f"word_end_rate {metrics['word_end_rate']}")


def _label_one(arg) -> dict:
    path, lab = arg
    header, events = read_stream(path)
    kwargs = dict(lab)
    kwargs.setdefault("t_ms", header.duration_us / 1000.0)
    lcfg = labeling.LabelerConfig(**kwargs)
    seg = labeling.extract_segment(events, lcfg)
    rec = {"sample": os.path.basename(path)}
    if seg is None:
        rec["segment"] = None
    else:
        rec["segment"] = {"t_start_ms": seg.t_start_ms, "t_end_ms": seg.t_end_ms,
                          "start_bin": seg.start_bin, "end_bin": seg.end_bin}
    return rec


def cmd_label(cfg: dict, out_dir: str, config_dir: str) -> None:
    paths = _resolve_inputs(cfg, config_dir)
    lab = _section(cfg, "labeler", required=False)
    try:
        records = _map_streams(_label_one, [(p, lab) for p in paths],
                               int(cfg.get("workers", 1)))
    except ValueError as exc:
        raise ConfigError("labeler", str(exc)) from None
    with open(os.path.join(out_dir, "segments.csv"), "w", encoding="ascii") as fh:
        fh.write("sample,t_start_ms,t_end_ms\n")
        for r in records:
            if r["segment"] is not None:
                fh.write(f"{r['sample']},{r['segment']['t_start_ms']},"
                         f"{r['segment']['t_end_ms']}\n")
    summary = {
        "num_samples": len(records),
        "num_segments": sum(r["segment"] is not None for r in records),
    }
    _write_json(summary, os.path.join(out_dir, "summary.json"))
    print(f"label: {summary['num_segments']}/{summary['num_samples']} streams "
          "produced a segment")


def cmd_train(cfg: dict, out_dir: str, config_dir: str) -> None:
    tsec = _section(cfg, "train")
    kind = tsec.get("kind", "classifier")
    if kind != "classifier":
        raise ConfigError("train.kind", f"unsupported kind {kind!r} (classifier only)")
    graph_cfg = _graph_cfg(_section(cfg, "graph"), "graph")
    num_classes = tsec.get("num_classes")
    if not isinstance(num_classes, int) or num_classes < 2:
        raise ConfigError("train.num_classes", "must be an integer >= 2")
    preset_name = tsec.get("preset", "tiny")
    if preset_name not in perf.PRESETS or "fc" not in perf.PRESETS[preset_name]:
        raise ConfigError("train.preset", f"unknown classifier preset {preset_name!r}")
    preset = perf.PRESETS[preset_name]
    conv_dims = tsec.get("convs", list(preset["convs"]))
    fc_hidden = tsec.get("fc", preset["fc"])
    paths = _resolve_inputs(cfg, config_dir)
    samples = []
    for p in paths:
        header, events = read_stream(p)
        if header.label is None:
            raise ConfigError("inputs", f"training stream without label: {p}")
        samples.append((events, header.label))
    tcfg = training.TrainConfig(
        epochs=int(tsec.get("epochs", 50)),
        lr=float(tsec.get("lr", 2e-4)),
        weight_decay=float(tsec.get("weight_decay", 1e-4)),
        batch_size=int(tsec.get("batch_size", 16)),
        seed=int(cfg.get("seed", 0)),
        plateau_factor=float(tsec.get("plateau_factor", 0.5)),
        plateau_patience=int(tsec.get("plateau_patience", 10)),
        checkpoint_metric=tsec.get("checkpoint_metric", "train_loss"),
    )
    net = model.init_classifier(graph_cfg, conv_dims, fc_hidden, num_classes,
                                seed=int(cfg.get("seed", 0)))
    history = training.train_classifier(net, samples, tcfg)
    model.save_model(net, os.path.join(out_dir, "model.json"))
    _write_json(history, os.path.join(out_dir, "history.json"))
    _write_json({"epochs": tcfg.epochs, "final_train_loss": history["train_loss"][-1],
                 "best_metric": history["best_metric"]},
                os.path.join(out_dir, "training_state.json"))
    print(f"train: {tcfg.epochs} epochs, final loss {history['train_loss'][-1]:.4f}")


def cmd_perf(cfg: dict, out_dir: str, config_dir: str) -> None:
    psec = _section(cfg, "perf", required=False)
    task = psec.get("task", "classifier")
    graph_section = psec.get("graph", {"num_channels": 700, "r_ch": 100, "skip": 10,
                                       "r_t_us": 100_000})
    graph_cfg = _graph_cfg(graph_section, "perf.graph")
    clock = float(psec.get("clock_hz", perf.DEFAULT_CLOCK_HZ))
    conv_lanes = int(psec.get("conv_lanes", perf.CONV_LANES_DEFAULT))
    num_classes = int(psec.get("num_classes", 20))
    preset_name = psec.get("preset", "base")
    if preset_name not in perf.PRESETS:
        raise ConfigError("perf.preset", f"unknown preset {preset_name!r}")
    preset = perf.PRESETS[preset_name]
    conv_dims = tuple(psec.get("convs", preset["convs"]))
    if task == "classifier":
        if "fc" not in preset and "fc" not in psec:
            raise ConfigError("perf.fc", "classifier task needs an fc width")
        fc_hidden = int(psec.get("fc", preset.get("fc", 64)))
        pipe = perf.classifier_pipeline(graph_cfg, conv_dims, clock, conv_lanes)
        params = perf.classifier_param_count(conv_dims, fc_hidden, num_classes)
    elif task == "kws":
        stem = tuple(psec.get("stem", preset.get("stem", (72, 72))))
        hidden = int(psec.get("hidden", preset.get("hidden", 72)))
        head_lanes = int(psec.get("head_lanes", 2))
        pipe = perf.kws_pipeline(graph_cfg, conv_dims, stem, hidden, num_classes,
                                 clock, conv_lanes, head_lanes)
        params = perf.kws_param_count(conv_dims, stem, hidden, num_classes)
    else:
        raise ConfigError("perf.task", f"unknown task {task!r}")
    report = perf.latency_report(pipe)
    report["param_count"] = params
    report["memory_bytes"] = perf.memory_footprint_bytes(graph_cfg, conv_dims, params)
    report["task"] = task
    report["preset"] = preset_name
    _write_json(report, os.path.join(out_dir, "report.json"))
    lines = [f"{'stage':<12} {'ii':>8} {'latency':>8} {'us':>10}"]
    for s in report["stages"]:
        lines.append(f"{s['name']:<12} {s['ii_cycles']:>8} {s['latency_cycles']:>8} "
                     f"{s['latency_us']:>10.4f}")
    lines.append(f"bottleneck: {report['bottleneck']}")
    lines.append(f"throughput: {report['throughput_eps'] / 1e3:.2f} kEPS")
    lines.append(f"fe latency: {report['fe_us']:.3f} us")
    if report["head_us"]:
        lines.append(f"head latency: {report['head_us']:.3f} us")
    lines.append(f"total latency: {report['total_us']:.3f} us")
    lines.append(f"parameters: {params}")
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))


def cmd_eval(cfg: dict, out_dir: str, config_dir: str) -> None:
    esec = _section(cfg, "eval")
    pred_path = esec.get("predictions")
    if not isinstance(pred_path, str):
        raise ConfigError("eval.predictions", "missing predictions.jsonl path")
    if not os.path.isabs(pred_path):
        pred_path = os.path.join(config_dir, pred_path)
    try:
        with open(pred_path, "r", encoding="ascii") as fh:
            records = [json.loads(line) for line in fh if line.strip()]
    except OSError as exc:
        raise ConfigError("eval.predictions", str(exc)) from None
    task = esec.get("task", "classify")
    if task == "classify":
        labeled = [r for r in records if r.get("label") is not None]
        correct = sum(r["pred"] == r["label"] for r in labeled)
        metrics = {"num_samples": len(records), "num_labeled": len(labeled),
                   "accuracy": correct / len(labeled) if labeled else None}
    elif task == "kws":
        metrics = _kws_metrics(records)
    else:
        raise ConfigError("eval.task", f"unknown task {task!r}")
    _write_json(metrics, os.path.join(out_dir, "metrics.json"))
    print(f"eval: {json.dumps(metrics, sort_keys=True)}")


COMMANDS = {
    "classify": cmd_classify,
    "kws": cmd_kws,
    "label": cmd_label,
    "train": cmd_train,
    "perf": cmd_perf,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="evgraph",
                                     description="event-graph network toolkit")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--mode", choices=("real", "fq", "int", "integer"), default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry (dotted path, JSON value)")
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config, args.set)
        if args.mode is not None:
            cfg["mode"] = args.mode
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.workers is not None:
            cfg["workers"] = args.workers
        mode = cfg.get("mode", "real")
        if mode == "integer":
            mode = cfg["mode"] = "int"
        if mode not in ("real", "fq", "int"):
            raise ConfigError("mode", f"unknown mode {mode!r}")
        os.makedirs(args.out, exist_ok=True)
        COMMANDS[args.command](cfg, args.out, os.path.dirname(os.path.abspath(args.config)))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
