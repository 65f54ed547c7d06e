"""Scientometric metrics engine: keyword-embedding novelty, citation metrics,
imputed author contributions and fixed-effect regressions on team hierarchy."""

__version__ = "0.1.0"
