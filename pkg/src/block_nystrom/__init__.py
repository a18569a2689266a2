"""Block-Nystrom approximation of PSD matrices."""
