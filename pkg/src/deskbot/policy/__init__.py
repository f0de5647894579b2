from .schedule import NoiseSchedule, make_schedule, forward_noise
from .normalize import MinMaxNormalizer
from .dataset import ObsLayout, WindowDataset, build_windows, layout_from_episode
from .diffusion import DiffusionPolicy, ddim_sample, ddim_taus, finetune
from .bc import BCPolicy
from .checkpoint import save_checkpoint, load_checkpoint, policy_from_checkpoint

__all__ = [
    "NoiseSchedule",
    "make_schedule",
    "forward_noise",
    "MinMaxNormalizer",
    "ObsLayout",
    "WindowDataset",
    "build_windows",
    "layout_from_episode",
    "DiffusionPolicy",
    "ddim_sample",
    "ddim_taus",
    "finetune",
    "BCPolicy",
    "save_checkpoint",
    "load_checkpoint",
    "policy_from_checkpoint",
]
