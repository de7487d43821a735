"""Event-camera histogram normalization and a zero-skipping CNN accelerator model."""
from .aer_stream import (DAVIS240, EVENT_DTYPE, AerEvent, SensorGeometry, gen_moving_edge,
                         gen_uniform_noise, read_events, write_events)
from .fixed_point import (Q16_8, Q24_16, QFormat, QVal, from_real, q_add, q_div, q_mul,
                          q_sqrt, q_sub, to_real)
from .histogram import (DoubleBuffer, EventHistogram, collect_frames, map_coordinate,
                        read_histogram, reset_buffer, write_histogram)
from .normalizer import (Degenerate, NormalizedFrame, NormStats, NormVariant, compute_stats,
                         norm_pipeline_cycles, normalize_fixed, normalize_float)
from .nullhop import (ConvLayerConfig, MacStats, NetworkConfig, conv_dense_oracle,
                      conv_zero_skip, load_network, maxpool2, relu, roshambo_network,
                      run_layer, run_network, save_network)
from .pipeline import (Mode, PipelineTrace, StageTiming, collection_duration, end_to_end,
                       simulate, speedup)
from .sparsity import (CompressedFeatureMap, compressed_size_bits, compression_ratio, decode,
                       encode, iter_nonzero)

__version__ = "0.1.0"
