"""Loading and saving policy, scenario and universe documents."""
