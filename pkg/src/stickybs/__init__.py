"""Pricing and hedging engine for the sticky Black-Scholes model."""

from stickybs.model import ModelParams, Payoff, ScaleSpeed, scale_speed, to_risk_neutral, validate

__all__ = ["ModelParams", "Payoff", "ScaleSpeed", "scale_speed", "to_risk_neutral", "validate"]
__version__ = "0.1.0"
