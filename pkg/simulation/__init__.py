"""Ground-truth network dynamics, attacks and synthetic temporal datasets."""
