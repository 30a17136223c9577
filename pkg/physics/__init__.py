"""Physics models for cold atoms transiting a microtoroidal resonator."""
