"""stocklens: automatic design of imaging lenses from stock catalog elements.

Submodules:
  catalog    element catalog, glass dispersion, synthetic generation
  optics     system model, exact ray tracing, first-order analysis
  merit      geometric and diffraction image-quality metrics
  optimize   continuous air-gap / focus optimization
  search     discrete seeding, splitting, and evolutionary search
  tolerance  Monte Carlo manufacturing sensitivity
  runs       persistent search runs and parallel orchestration
  service    HTTP API
  cli        command line entry point
"""

__version__ = "0.1.0"
