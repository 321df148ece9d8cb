"""Polygonal billiards with contracting reflection laws.

Modules: ``geometry`` (polygons and the arclength chart), ``billiard`` (the
contracted billiard map and its derivative), ``slapmap`` (the orthogonal
projection map), ``pwexp`` (piecewise expanding maps and their acips),
``srb`` (empirical attractors) and ``corpus`` (example families).
"""

__version__ = "0.1.0"
