"""FastAPI backend for the adaptive safety simulator."""
