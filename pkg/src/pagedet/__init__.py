"""Page object detection: grid proposals, region embeddings, attentive classification.

Submodules are imported explicitly, scipy-style::

    from pagedet import geometry, proposals, classifier
"""

__version__ = "0.1.0"
