"""Dialogue-simulation engine and evaluation harness for proactive trait elicitation."""

__version__ = "0.1.0"
