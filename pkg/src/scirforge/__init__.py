"""scirforge: dataset-grounded QA corpus construction and benchmarking."""

__version__ = "0.1.0"
