"""anchorflow-bench - editing samplers on exact mixture flows."""
