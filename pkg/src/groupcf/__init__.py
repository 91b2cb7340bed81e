"""Single and group counterfactual explanations for tabular binary classifiers."""

__version__ = "0.1.0"
