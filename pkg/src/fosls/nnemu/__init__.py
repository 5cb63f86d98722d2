"""Exact neural-network emulation of lowest-order FE and FoSLS spaces."""
from .core import (BISU, ID, RELU, Layer, NeuralNet, affine_net, bisu, concat, export_nn, from_json_dict,
                   identity_net, import_nn, mult_by_step_net, nn_stats, parallelize, relu, scale_output,
                   sparse_concat, sum_nn, to_json_dict)
from .fem import (FoslsNet, basis_net, deep_lsq_solve, fosls_basis_net, indicator_net, nn_linear_comb,
                  nn_local_residual_sq, s1_relu_basis_net, set_output_weights)

__all__ = [
    "BISU", "ID", "RELU", "Layer", "NeuralNet", "affine_net", "bisu", "concat", "export_nn", "from_json_dict",
    "identity_net", "import_nn", "mult_by_step_net", "nn_stats", "parallelize", "relu", "scale_output",
    "sparse_concat", "sum_nn", "to_json_dict", "FoslsNet", "basis_net", "deep_lsq_solve", "fosls_basis_net",
    "indicator_net", "nn_linear_comb", "nn_local_residual_sq", "s1_relu_basis_net", "set_output_weights",
]
