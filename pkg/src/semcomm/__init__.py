"""Knowledge-graph semantic communication with imitation-learned path reasoning."""

from .channel import ChannelConfig, TransmitRecord, transmit
from .comparator import ComparatorNetwork, PathDistribution, semantic_distance
from .decoder import hard_recover, nearest_entity, reasoning_constrained_recover, soft_recover
from .encoder import EmbeddingTable, EncoderConfig, train_encoder
from .interpreter import PolicyNetwork, rollout
from .kg_store import ExpertPathSet, ExplicitSemantics, KnowledgeGraph, SemanticPath
from .trainer import TrainConfig, TrainLog, train

__version__ = "0.1.0"

__all__ = [
    "ChannelConfig", "ComparatorNetwork", "EmbeddingTable", "EncoderConfig", "ExpertPathSet",
    "ExplicitSemantics", "KnowledgeGraph", "PathDistribution", "PolicyNetwork", "SemanticPath",
    "TrainConfig", "TrainLog", "TransmitRecord", "hard_recover", "nearest_entity",
    "reasoning_constrained_recover", "rollout", "semantic_distance", "soft_recover",
    "train", "train_encoder", "transmit",
]
