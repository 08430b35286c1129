"""homolab: a numerical laboratory for stochastic homogenization of monotone elliptic PDEs.

The package is organized around the objects of the theory:

- :mod:`homolab.grid` — periodic lattices, compatible finite differences, spectral solves,
  and the binary field-snapshot format;
- :mod:`homolab.randomfield` — stationary coefficient fields by filtering lattice white
  noise through a short-range kernel and clamping into the admissible parameter ball;
- :mod:`homolab.material` — monotone operator families (convex mixtures, a rational
  isotropic family, linear baselines) and an assumption validator;
- :mod:`homolab.corrector` — periodic and massive-term correctors, flux correctors,
  linearized correctors, minimal radii, and localization diagnostics;
- :mod:`homolab.homog` — representative-volume estimators of the effective operator and
  the Monte-Carlo experiments probing their fluctuations and bias;
- :mod:`homolab.twoscale` — partitions of unity, two-scale expansions with a residual
  audit, and homogenization-error experiments;
- :mod:`homolab.harness` — config-driven experiment runner behind the ``homolab`` CLI.
"""

__version__ = "0.1.0"
