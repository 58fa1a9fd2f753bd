"""Cycle-level performance model of a heterogeneous edge multi-core running multimodal LLMs."""

__version__ = "0.1.0"
