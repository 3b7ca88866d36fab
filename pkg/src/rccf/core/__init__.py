from rccf.core.functional import (activation, bilinear_resize, conv2d, correlate, embedding,
                                  linear, relu, sigmoid)
from rccf.core.gradcheck import finite_difference_check
from rccf.core.tensor import (Tensor, backward, computation_record, concat, stack,
                              topological_order)

__all__ = [
    "Tensor", "backward", "computation_record", "concat", "stack", "topological_order",
    "activation", "bilinear_resize", "conv2d", "correlate", "embedding", "linear", "relu",
    "sigmoid", "finite_difference_check",
]
