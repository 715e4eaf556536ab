"""
Simulated federated, selective and differentially private training of mood
classifiers on typing sessions.
"""
