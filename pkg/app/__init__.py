"""Activity-centric access control toolkit."""
