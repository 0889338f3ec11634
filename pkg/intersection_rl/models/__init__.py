"""Networks, gradient tape, optimiser and checkpoint format."""
