"""Value types, configuration, errors, seeding and the run registry."""
