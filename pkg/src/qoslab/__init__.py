"""RTCP-driven three-level QoS adaptation lab for relayed video sessions."""

__version__ = "0.1.0"
