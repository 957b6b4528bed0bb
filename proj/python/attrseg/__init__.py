"""Python bindings for the attribute-prompt segmentation core.

The heavy lifting (encoders, training, evaluation) lives in the C++ CLI; this
package exposes the core operations for quick experiments and validation:
cosine cost maps, the training loss, the IoU metric, prompt templates, and the
description-bank utilities.
"""

from ._core import (
    attribute_query,
    bank_description,
    bce_loss,
    cost_map,
    generate_fixture_bank,
    miou,
    name_template,
    predict_labels,
    sha256_file,
    token_ids,
)

__all__ = [
    "attribute_query",
    "bank_description",
    "bce_loss",
    "cost_map",
    "generate_fixture_bank",
    "miou",
    "name_template",
    "predict_labels",
    "sha256_file",
    "token_ids",
]
