"""Joint CSI prediction and secrecy-optimal transmitter selection over simulated Rayleigh fading links."""

from .chansim import ChannelConfig
from .evaluation import EvalReport, ExperimentConfig
from .models import Hyperparams, ModelKind
from .secrecy import TopologyConfig

__all__ = ["ChannelConfig", "EvalReport", "ExperimentConfig", "Hyperparams", "ModelKind", "TopologyConfig"]
