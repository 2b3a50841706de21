"""Ordinal prevalence quantification and quantification-driven feature-block selection."""
