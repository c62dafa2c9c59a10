"""Gaussian-gated LSTM (g-LSTM): a time-gated LSTM trained with exact BPTT in numpy."""

from .network import GLSTM, backward, build_model, export_to_lstm, forward, forward_thresholded
from .timegate import GateParams, gate_value, time_axis
from .training import TrainConfig, Trainer, load_data

__all__ = [
    "GLSTM", "backward", "build_model", "export_to_lstm", "forward", "forward_thresholded",
    "GateParams", "gate_value", "time_axis", "TrainConfig", "Trainer", "load_data",
]

__version__ = "0.1.0"
