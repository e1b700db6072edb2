"""Regional rotation layers: LBP-canonicalized windows for rotation-invariant CNNs."""

from .lbp import ChannelPolicy, LbpMode, canonical_rotation, lbp_code
from .models import NetworkConfig, build, parse_config, preset
from .rrl import RotationRecord, global_rrl, rrl_backward, rrl_forward
from .tensor import WindowGrid, rot90, rotate_bilinear

__all__ = [
    "ChannelPolicy",
    "LbpMode",
    "NetworkConfig",
    "RotationRecord",
    "WindowGrid",
    "build",
    "canonical_rotation",
    "global_rrl",
    "lbp_code",
    "parse_config",
    "preset",
    "rot90",
    "rotate_bilinear",
    "rrl_backward",
    "rrl_forward",
]
