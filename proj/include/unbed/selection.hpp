#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace unbed {

/// Trusted-subset bookkeeping for bootstrap learning. Indices refer to
/// positions in the full training set D.
struct SelectionState {
  struct Iteration {
    std::size_t iteration = 0;  // 0 = initial data-uncertainty selection
    std::size_t selected = 0;
    double mean_uncertainty = 0.0;
    double val_f1 = 0.0;
    bool fallback = false;  // quantile rule replaced the threshold
    std::vector<std::size_t> members;
  };

  std::size_t dataset_size = 0;
  std::vector<std::size_t> trusted;  // current C, sorted
  std::vector<Iteration> history;
  std::size_t current_iteration = 0;
};

}  // namespace unbed
