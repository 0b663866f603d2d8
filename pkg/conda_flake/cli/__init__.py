from conda_flake.cli import main

__all__ = ["main"]
