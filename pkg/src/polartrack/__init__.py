"""Joint carrier-phase and polarization tracking for coherent receivers."""
