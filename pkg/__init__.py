"""Manning coefficient recovery for the diffusive wave equation."""
