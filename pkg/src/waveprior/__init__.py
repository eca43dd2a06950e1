"""Deep waveform priors: restore audio by fitting an untrained generator to one corrupted clip."""

from .architectures import PRESETS, NetworkVariant, build_network, get_preset
from .corruption import CorruptionSpec, MaskInterval, Waveform, add_noise, corrupt, generate_rir
from .estimator import DeepPriorRestorer
from .metrics import estimate_rt60, evaluate, psnr, si_snr
from .trainer import FitResult, FitTrace, TrainConfig, fit_prior

__all__ = [
    "PRESETS",
    "NetworkVariant",
    "build_network",
    "get_preset",
    "CorruptionSpec",
    "MaskInterval",
    "Waveform",
    "add_noise",
    "corrupt",
    "generate_rir",
    "DeepPriorRestorer",
    "estimate_rt60",
    "evaluate",
    "psnr",
    "si_snr",
    "FitResult",
    "FitTrace",
    "TrainConfig",
    "fit_prior",
]
