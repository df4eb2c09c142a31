class ClaipError(Exception):
    """Generic class for claip_emo error handling.

    Every subclass carries a machine-readable ``code``. The CLI prints it
    alongside the class name so failures are parseable from scripts.
    """
    code = "claip_error"

    def __init__(self, message: str) -> None:
        self.message = message
        super().__init__(self.message)

    def __str__(self) -> str:
        return f'{self.__class__.__name__} Message: {self.message}'


class EnvVarError(ClaipError):
    code = "env_var_error"


# TENSOR CORE

class ShapeError(ClaipError):
    code = "shape_error"


class AxisError(ClaipError):
    code = "axis_error"


class TapeError(ClaipError):
    code = "tape_error"


# AUDIO

class AudioError(ClaipError):
    code = "audio_error"


class WaveformTooShortError(AudioError):
    code = "waveform_too_short"


class SampleRateMismatchError(AudioError):
    code = "sample_rate_mismatch"


class FilterbankError(AudioError):
    code = "filterbank_error"


class AudioFormatError(AudioError):
    code = "audio_format_error"


# CHECKPOINTS

class CheckpointError(ClaipError):
    code = "checkpoint_error"


class CheckpointFormatError(CheckpointError):
    code = "checkpoint_format_error"


class CheckpointShapeError(CheckpointError):
    code = "checkpoint_shape_mismatch"


class CheckpointTruncatedError(CheckpointError):
    code = "checkpoint_truncated"


class CheckpointChecksumError(CheckpointError):
    code = "checkpoint_checksum_mismatch"


class CheckpointKeyError(CheckpointError):
    code = "checkpoint_key_error"


# LORA

class LoraError(ClaipError):
    code = "lora_error"


class LoraConfigError(LoraError):
    code = "lora_config_error"


class DoubleInjectionError(LoraError):
    code = "double_injection"


class AlreadyMergedError(LoraError):
    code = "already_merged"


# MODEL

class AggregationError(ClaipError):
    code = "aggregation_error"


# TRAINING

class TrainingError(ClaipError):
    code = "training_error"


class NonFiniteLossError(TrainingError):
    code = "non_finite_loss"

    def __init__(self, message: str, snapshot_path=None) -> None:
        self.snapshot_path = snapshot_path
        super().__init__(message)


class NonFiniteGradientError(TrainingError):
    code = "non_finite_gradient"


class LabelError(TrainingError):
    code = "label_error"


# DATA

class DataError(ClaipError):
    code = "data_error"


class DatasetSpecError(DataError):
    code = "dataset_spec_error"


class FoldSplitError(DataError):
    code = "fold_split_error"


class FoldLeakageError(DataError):
    code = "fold_leakage"


# CONFIG

class ConfigError(ClaipError):
    code = "config_error"


class UnknownConfigKeyError(ConfigError):
    code = "unknown_config_key"


class InvalidConfigValueError(ConfigError):
    code = "invalid_config_value"


class GradientCheckError(ClaipError):
    code = "gradient_check_failed"
