"""Edge tracing with Gaussian process regression."""
