"""DC optimal power flow with batteries: regularized models, LP tightness checks and N-k siting."""
__version__ = "0.1.0"
