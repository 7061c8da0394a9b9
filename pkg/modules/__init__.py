"""Modules package - independent subcommand modules."""
