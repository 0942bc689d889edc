"""Edge-weight synthesis for cooperative LTI systems (lumped and distributed)."""
__version__ = "0.1.0"
