"""Laboratoire self-model : Dyna contre PPO sans modèle à budget réel égal."""

__version__ = "0.1.0"
