"""anchorflow-bench test suite."""
