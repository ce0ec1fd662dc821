"""L3 photonic-crystal cavity toolkit: slab GME solver, Q optimisation,
layer-stack optics and fitting of spectra, decays and HBT histograms."""

__version__ = "0.1.0"
