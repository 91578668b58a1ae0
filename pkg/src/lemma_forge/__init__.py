"""Weekly lemma benchmark pipeline: harvest, extract, retrieve, prove, report."""

__version__ = "0.1.0"
