"""Unique recovery of gradient-cosparse images from few tomographic projections."""
