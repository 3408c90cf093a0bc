"""Registration and pooled estimation of a mean function from two misaligned datasets."""
