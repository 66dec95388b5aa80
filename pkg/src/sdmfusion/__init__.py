"""Species distribution modelling from citizen-science sightings.

Gridding and aggregation (:mod:`geo`, :mod:`occurrence`), raster patches
(:mod:`raster`), pseudo-absence generation (:mod:`pseudoabsence`), dataset
balancing (:mod:`balance`), a numpy late-fusion network (:mod:`fusion`),
ensemble weighting (:mod:`ensemble`), covariate ranking (:mod:`featsel`),
metrics (:mod:`metrics`), synthetic worlds (:mod:`testkit`) and a
command-line pipeline (:mod:`cli`).
"""

__version__ = "0.1.0"
