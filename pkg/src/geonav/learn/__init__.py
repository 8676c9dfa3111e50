"""Networks, the TD3 teacher trainer and policy distillation."""
