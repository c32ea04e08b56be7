"""Flow integration, velocity fields and anchor algebra."""
