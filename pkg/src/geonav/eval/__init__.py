"""Task batteries, metrics and report files."""
