"""Knowledge-guided training of tabular classifiers with Shapley explanation losses."""

__version__ = "0.1.0"
