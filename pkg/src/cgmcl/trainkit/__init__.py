"""Training, evaluation, exports and the command-line interface."""
