"""darijakit: build, translate, and evaluate Darija instruction corpora."""

__version__ = "0.1.0"
