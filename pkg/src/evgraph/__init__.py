"""Streaming event-graph networks: graph generation, quantized inference,
keyword spotting, boundary labeling, training, and hardware cost models."""

from .events import (
    Burst,
    Event,
    StreamFormatError,
    StreamHeader,
    SynthSpec,
    events_to_arrays,
    read_stream,
    synth_stream,
    write_stream,
)
from .graph import (
    ContextMemory,
    EventGraphVertex,
    GraphError,
    GraphGenConfig,
    brute_force_graph,
    build_graph,
    gen_cycles,
    process_event,
)
from .conv import (
    ConvLayerParams,
    FeatureStore,
    conv_cycles,
    conv_forward,
    flops_per_event,
    positional_norm,
)
from .pooling import AvgAccumulator, WindowFeature, WindowMaxPooler
from .heads import (
    GruParams,
    KwsOutput,
    KwsParams,
    KwsState,
    LinearParams,
    MlpParams,
    classify,
    gru_step,
    head_cycles,
    kws_head_products,
    kws_init_state,
    kws_step,
    mlp_forward,
    softmax,
)
from .quant import (
    AccumulatorOverflow,
    BatchNormParams,
    Calibration,
    LinearQuant,
    QuantParams,
    RequantParams,
    fold_batchnorm,
    make_lut,
    quantize,
    dequantize,
    requant_from_factor,
)
from .labeling import (
    KeywordSegment,
    LabelerConfig,
    acc_k,
    acc_k_delta,
    event_histogram,
    extract_segment,
    peak_window,
    segment_from_histogram,
    smooth_histogram,
    target_window,
    word_end_rate,
)
from .model import (
    ClassifierNet,
    KwsNet,
    build_graph_arrays,
    calibrate_classifier,
    calibrate_kws,
    classifier_batch,
    classify_stream,
    init_classifier,
    init_kws,
    kws_batch,
    kws_stream,
    load_model,
    save_model,
    stream_features,
)
from .perf import (
    PRESETS,
    PipelineSpec,
    Stage,
    classifier_param_count,
    classifier_pipeline,
    kws_param_count,
    kws_pipeline,
    latency_report,
    memory_footprint_bytes,
    throughput_eps,
)
from .training import (
    LossConfig,
    TrainConfig,
    TrainingDiverged,
    evaluate_classifier,
    loss_classification,
    loss_kws,
    make_toy_classification,
    train_classifier,
    train_kws,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
