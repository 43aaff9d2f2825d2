"""Position-free Monte Carlo estimators for slab and Smith microfacet BSDFs."""
