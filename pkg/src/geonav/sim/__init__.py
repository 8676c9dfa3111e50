"""Field models, the navigation environment and reward shaping."""
