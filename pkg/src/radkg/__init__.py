"""radkg: knowledge-graph triplet generation from radiology-style
reports and image feature vectors, trained and decoded end to end on
a closed-form autodiff core."""

__version__ = "0.1.0"
