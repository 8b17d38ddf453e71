#pragma once

#include <cstdint>
#include <vector>

#include "eprop/matrix.hpp"

namespace eprop {

/// One classified sequence: feature frames (T x n_channels) plus one
/// target class index per frame.
struct Utterance {
  Matrix features;               // T x 39 for the speech pipeline
  std::vector<uint16_t> labels;  // size T, class indices

  int n_frames() const { return features.rows(); }
  int n_channels() const { return features.cols(); }
};

}  // namespace eprop
