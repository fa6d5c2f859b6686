"""mmrec: a desk-scale multimodal generative recommender.

The package is organized as a plain numpy library: dataset ingestion,
shared numerics, multimodal encoders and fusion, a small causal decoder
for next-item generation, in-dataset retrieval, causal debiasing,
templated explanations, online adaptive learning, ranking metrics, and
an experiment harness with a CLI (``mmrec``).
"""

__version__ = "0.1.0"
