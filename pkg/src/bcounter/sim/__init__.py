"""Deterministic discrete-event simulation of geo-replicated counters."""

from .kernel import TIMEOUT, Future, Process, Simulator
from .net import DEFAULT_RTTS, Network

__all__ = ["TIMEOUT", "Future", "Process", "Simulator", "Network", "DEFAULT_RTTS"]
