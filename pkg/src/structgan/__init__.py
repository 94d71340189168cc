"""Cycle-consistent image enhancement with edge, perceptual and
segmentation constraints."""

from .config import (ConfigError, ExperimentConfig, LrSchedule, UnknownPresetError,
                     builtin_config, learning_rate_at, load_experiment_config,
                     scales_for_crop, serialize_config)
from .data import (CorruptionSpec, load_paired_testset, load_unpaired_dataset, preprocess,
                   synthesize_desk_dataset, write_desk_dataset)
from .evaluation import BoxStats, compare_report, evaluate_config, summarize_boxplot
from .features import (EdgeDetector, PerceptualExtractor, SegNet, analytic_edge_oracle,
                       detect_edges, extract_perceptual_features, segment)
from .losses import (FeatureStack, LossReport, adversarial_discriminator_loss,
                     adversarial_generator_loss, cycle_consistency_loss,
                     edge_introduction_loss, edge_preservation_loss, perceptual_distance,
                     total_objective)
from .networks import (DiscriminatorSpec, TransformerSpec, build_discriminator,
                       build_transformer, discriminate, subpixel_downsample,
                       subpixel_upsample, transform)
from .training import (ImagePool, build_train_state, pool_query, train, train_step,
                       wire_losses)

__version__ = "0.1.0"
