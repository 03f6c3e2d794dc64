"""Event-camera person following: simulator, perception, networks and DDPG training."""

from .world import RobotPose, TerminationStatus, VelocityCommand, WorldMap
from .env import FollowEnv, SimConfig
from .harness import RunConfig, compute_metrics, load_config, run_episode

__version__ = "0.1.0"
