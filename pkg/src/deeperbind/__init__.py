"""DeeperBind and DeepBind models for PBM probe intensity prediction."""

__version__ = "0.1.0"
