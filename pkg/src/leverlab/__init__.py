"""leverlab: instantiate, realise, audit, score and summarise single-lever
counterfactual edits of street-view scenes."""

__version__ = "0.1.0"
