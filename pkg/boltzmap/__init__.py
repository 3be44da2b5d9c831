# Generalized restricted Boltzmann machines as models of interacting
# binary variables.

__version__ = '0.1.0'
