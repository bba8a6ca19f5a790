"""Hierarchical frequency control for hybrid power plants with a frequency response observer."""

from .analysis import (
    QFilter, bode, butterworth_q, frob_closed_loops, loop_transfer, pi_tune, q_select,
    robust_check_delay, robust_check_params, template_q,
)
from .config import ConfigErrors, load_config, parse_config, validate
from .lti import DiscreteFilter, TransferFunction, filter_step, tf, tf_connect, tf_discretize, tf_eval
from .simkit import DelayLine, NoiseSource, TimeSeriesRecord, metrics, run

__version__ = "0.1.0"

__all__ = [
    "QFilter", "bode", "butterworth_q", "frob_closed_loops", "loop_transfer", "pi_tune", "q_select",
    "robust_check_delay", "robust_check_params", "template_q", "ConfigErrors", "load_config",
    "parse_config", "validate", "DiscreteFilter", "TransferFunction", "filter_step", "tf", "tf_connect",
    "tf_discretize", "tf_eval", "DelayLine", "NoiseSource", "TimeSeriesRecord", "metrics", "run",
]
