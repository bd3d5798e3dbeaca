"""Mining and classifying performance bug-fix commits from git history."""

__version__ = "0.1.0"
