"""Command-line surface, configuration files, persistence and the comparison run."""
