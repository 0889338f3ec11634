"""Model rollouts, losses and the APG / DPG training loop."""
