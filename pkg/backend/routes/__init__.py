"""Route modules for the simulator API."""
