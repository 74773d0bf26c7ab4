#pragma once

// Data-parallel kernels. Each OpenMP kernel has a serial twin with the same
// per-entry arithmetic; the two must agree bit for bit regardless of the
// thread count, since every entry is computed independently and nothing is
// reduced across threads.

#include <span>

#include "kbcf/kernel.hpp"
#include "kbcf/model.hpp"
#include "kbcf/types.hpp"

namespace kbcf::parallel {

// Gram entries over feature rows: upper triangle computed, lower mirrored, diagonal 1.
Matrix gram_entries(const KernelSpec& spec, const Matrix& rows);
Matrix gram_entries_serial(const KernelSpec& spec, const Matrix& rows);

// out(r, j) = K(points.row(r), centers.row(j)).
Matrix kernel_columns(const KernelSpec& spec, const Matrix& points, const Matrix& centers);
Matrix kernel_columns_serial(const KernelSpec& spec, const Matrix& points, const Matrix& centers);

// forward() for every pair.
Vector predict(const FactorizationModel& model, std::span<const Pair> pairs);
Vector predict_serial(const FactorizationModel& model, std::span<const Pair> pairs);

// forward() over the whole n_users x n_items grid.
Matrix predict_grid(const FactorizationModel& model);
Matrix predict_grid_serial(const FactorizationModel& model);

}  // namespace kbcf::parallel
