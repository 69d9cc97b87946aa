"""Continuous-state learners: neural fitted Q, Voronoi quantisation, fitted value iteration."""
