"""cohortfx: observational treatment-effect pipeline for hospital cohorts.

Library modules:

* ``preprocess`` - raw tables to the analysis covariate matrix
* ``cohort`` - 21-OSFD outcome and treatment-arm definitions
* ``glm`` - logistic IRLS, robust OLS, lasso paths and CV selection
* ``matching`` - caliper ratio matching and balance diagnostics
* ``estimation`` - unadjusted / regression-adjusted / matched effect estimates
* ``synth`` - confounded synthetic cohorts with known ground-truth effects
* ``pipeline`` - end-to-end driver; ``report`` - forest/summary/figures
* ``cli`` - the ``cohortfx`` command
"""

__version__ = "0.1.0"
