"""Core models, policy AST, state, evaluation and the decision engine."""
