"""EEGNet-based frame encoder and multiple-instance recording classifiers."""

from .encoder import ENCODING_DIM, EEGNetEncoder, EncoderConfig, fused_front
from .models import (KINDS, PARAMETER_COUNTS, AttentionPool, EmptyRecording,
                     IncompatibleEncoder, MINet, MiNet, SiNet, TransformerBlock, TransNet,
                     build_model, count_parameters, geometric_mean_logit, model_name)
from .training import (MIL_CONFIG, SINET_CONFIG, History, NoValidationFold, TrainConfig,
                       load_model, sample_frames, save_model, sinet_predict, train_mil,
                       train_sinet)
