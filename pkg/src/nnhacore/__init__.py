"""Block-linear hearing aid core driven by a prescription neural network."""

from .core import BlockProcessor, HaCoreConfig, make_window, process_file, process_signal
from .filterbank import FilterBank, FilterBankSpec, design_band_filter
from .modelio import load_model, save_model
from .prescription import (CompressorRule, Mlp, TrainerConfig, TrainingSet, forward, personalize,
                           reference_gain, train, widen)
from .slm import BandLevels, SlmConfig, measure

__all__ = [
    "BandLevels", "BlockProcessor", "CompressorRule", "FilterBank", "FilterBankSpec",
    "HaCoreConfig", "Mlp", "SlmConfig", "TrainerConfig", "TrainingSet", "design_band_filter",
    "forward", "load_model", "make_window", "measure", "personalize", "process_file",
    "process_signal", "reference_gain", "save_model", "train", "widen",
]
