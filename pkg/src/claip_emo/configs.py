from claip_emo import enums
from claip_emo.enums import EnvVars


def get_default_run_settings():
    # if new keys are added, also add them to the matching section model in config.py
    return {
        "preset": enums.BackbonePreset.base.value,
        "fusion": enums.FusionMode.concat_linear.value,
        "modality": enums.Modality.audiovisual.value,
        "seed": 0,
        "audio": {
            "sample_rate": 16000,
            "window": 400,
            "hop": 160,
            "n_fft": None,
            "n_mels": 64,
            "f_min": 50.0,
            "f_max": 8000.0,
        },
        "visual": {
            "depth": None,
            "d_model": None,
            "n_heads": None,
            "mlp_ratio": None,
            "image_size": 32,
            "channels": 1,
            "patch": 8,
        },
        "audio_encoder": {
            "depth": None,
            "d_model": None,
            "n_heads": None,
            "mlp_ratio": None,
            "patch_time": 8,
            "patch_mel": 64,
            "max_patches": 64,
            "use_pos_embed": True,
        },
        "lora": {
            "rank": 8,
            "alpha": 32.0,
            "dropout": 0.1,
            "full_finetune": False,
        },
        "agg": {
            "visual": enums.AggregationMode.transformer.value,
            "audio": enums.AggregationMode.mean.value,
        },
        "clip": {
            "frames": 8,
            "duration": 1.0,
        },
        "train": {
            "epochs": 30,
            "batch_size": 16,
            "lr_peak": 1e-5,
            "lr_min": 0.0,
            "warmup_epochs": None,
            "beta1": 0.9,
            "beta2": 0.999,
            "eps": 1e-8,
            "grad_clip": None,
            "validate_each_epoch": False,
            "test_mode": False,
        },
        "data": {
            "num_classes": 7,
            "clips_per_class": 50,
            "class_counts": None,
            "sigma_v": 0.3,
            "sigma_a": 0.1,
            "rho": 0.5,
            "temporal_order": False,
            "n_folds": 5,
        },
        "ablate": {
            "max_folds": None,
        },
    }


def default_env_vars() -> dict:
    """Returns a dict of default env vars.
    This is used by utils.read_env_vars_and_defaults() as the source for
    default env vars if they aren't defined in the environment.
    """
    return {
        EnvVars.CLAIP_THREADS: 1,
        EnvVars.CLAIP_RUN_SLOW: None,
        EnvVars.CLAIP_LOG_LEVEL: "INFO",
    }
