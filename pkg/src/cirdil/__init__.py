"""Domain-incremental CIR positioning: channel simulator, regressor, exemplar selection and experiment harness."""

__version__ = "0.1.0"
