"""Review subset selection for opinion summarization, at desk scale.

Submodules: ``corpus``, ``text_metrics``, ``features``, ``subset_dist``,
``nn``, ``reward``, ``trainer``, ``prior``, ``extsum``, ``analysis``,
``synthetic`` and the ``cli`` front-end.
"""

__version__ = "0.1.0"
