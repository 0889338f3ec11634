"""Online application of trained networks."""
