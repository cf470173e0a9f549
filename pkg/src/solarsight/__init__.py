"""solarsight: desk-scale soiling analysis for photovoltaic panels.

A numpy-based library (with numba-compiled convolution loops) covering the
full pipeline: a synthetic panel generator with a bypass-diode power
model, a power-loss classifier with input-aware fusion blocks, parameter-
free candidate soiling masks, a jointly trained mask refiner, a color-
histogram soiling-type classifier, evaluation metrics, and a cleaning
recommender.  The ``solar-sight`` CLI drives the staged pipeline; the
modules below are the library surface.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .classifier import (ClassifierConfig, bidiaf_forward, build_classifier,
                         classifier_forward, env_encode, fuse_env, parameter_count)
from .config import Config, load_config
from .errors import ConfigurationError, DataError, UsageError
from .masks import CandidateMask, PanelRegion, detect_panel, mask_to_label, pyramid_mask, pyramid_masks
from .metrics import EvalReport, jaccard, relaxed_accuracy, top1_and_confusion
from .netpbm import read_pgm, read_ppm, write_pgm, write_ppm
from .optim import SGD
from .panelgen import (GeneratorSpec, PanelLayout, Sample, SoilingField, augment,
                       bin_power_loss, generate_dataset, generate_sample, power_loss)
from .recommend import Recommendation, coverage, recommend
from .rng import SplitMix64, derive_seed
from .segmenter import (MultiTaskLoss, SegmenterConfig, build_segmenter,
                        multitask_loss, segmenter_forward, synthesis_unit)
from .soiltype import rgb_histogram24, roi_from_mask, train_type_classifier, type_forward
from .tensor import Tensor, backward, no_grad
from .training import TrainRecipe, train_classifier_loop, train_segmenter_loop

__version__ = "0.1.0"
