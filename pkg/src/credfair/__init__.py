"""Credit-risk scoring with classical models and domain-knowledge prompts, plus TPR-parity testing."""

__version__ = "0.1.0"
