"""
Agent Judge utilities
Trajectory model, model gateway, judges, refinement, metrics and sandbox helpers
"""
