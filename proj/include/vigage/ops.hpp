// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vigage/tape.hpp"

// Differentiable operations on tape variables. All matrices are rank 2 and
// row-major; row vectors multiply weights from the left (y = x * W).
namespace vigage {

Var matmul(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// Adds a length-D bias to every row of an N x D matrix.
Var add_row_bias(Var x, Var bias);
/// Multiplies row i of an N x D matrix by w[i].
Var scale_rows(Var x, Var w);

Var relu(Var x);
Var sigmoid(Var x);
Var abs(Var x);

/// Row-wise softmax with max subtraction.
Var softmax_rows(Var x);

Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t offset, std::size_t length);
std::vector<Var> split(Var x, std::span<const std::size_t> sizes, std::size_t axis);

/// Column means of an N x D matrix, as a 1 x D matrix.
Var mean_rows(Var x);
/// Sum of all elements as a single-element tensor.
Var sum(Var x);
Var mean(Var x);

/// Picks rows of a matrix by index (repeats allowed).
Var gather_rows(Var x, std::span<const std::size_t> rows);
Var reshape(Var x, Shape shape);

}  // namespace vigage
