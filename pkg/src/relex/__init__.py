"""Document-level relation extraction over abstracts.

Encodes a whole abstract once with a small self-attention encoder,
scores every (head token, relation, tail token) triple with a bi-affine
operator, pools mention-pair scores per entity pair with LogSumExp, and
jointly predicts named entities. Includes the tokenizer, dataset
builders, trainer and evaluation tooling the pipeline needs.
"""

__version__ = "0.1.0"
