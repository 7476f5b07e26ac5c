"""Command-line pipeline: configuration, stages and reports."""
