"""Spatiotemporal digital-twin modelling with a learned update gate."""
from .agent import AgentConfig, TwinAgent, TrainingLog, train
from .graph import GraphSignal, GraphStore, JoinTableStore, SpatialGraph, make_store
from .ingest import ETLPipeline, IngestQueues, TraditionalTwin, UpdateAction
from .metrics import EnergyModel, energy_proxy, mse
from .sim import Channel, ChannelConfig, RoadNetwork, TrafficSim, generate_network
from .twinning import SimSettings, TwinEnv

__version__ = "0.1.0"

__all__ = [
    "AgentConfig", "TwinAgent", "TrainingLog", "train",
    "GraphSignal", "GraphStore", "JoinTableStore", "SpatialGraph", "make_store",
    "ETLPipeline", "IngestQueues", "TraditionalTwin", "UpdateAction",
    "EnergyModel", "energy_proxy", "mse",
    "Channel", "ChannelConfig", "RoadNetwork", "TrafficSim", "generate_network",
    "SimSettings", "TwinEnv",
]
