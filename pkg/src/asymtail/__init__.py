"""Asymptotics of the maximum of a negatively drifted random walk."""
