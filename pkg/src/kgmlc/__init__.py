"""Knowledge-aware multi-label classification.

A knowledge graph supplies label-to-label semantic consistency through
random walks with restart; classifiers are trained on a feature cost plus a
square-root Laplacian penalty that pulls related labels' probabilities
together.
"""

__version__ = "0.1.0"
