"""Singing voice conversion with kNN feature matching, dual cross-attention
fusion and multi-band conditional flow matching, at desk scale.

Subpackages are imported on demand; the top level stays light so the CLI
can set thread counts before numerical libraries load.
"""

__version__ = "0.1.0"
