/* Copyright 2026 The WDMoE Simulator Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace wdmoe {

// Binary token-to-expert (or token-to-device) assignment q[i][j][k] for every
// block i, token j and column k.
class SelectionMatrix {
 public:
  SelectionMatrix() = default;
  SelectionMatrix(std::size_t blocks, std::size_t tokens, std::size_t columns)
      : blocks_(blocks), tokens_(tokens), columns_(columns), q_(blocks * tokens * columns, 0) {}

  std::size_t blocks() const { return blocks_; }
  std::size_t tokens() const { return tokens_; }
  std::size_t columns() const { return columns_; }

  bool selected(std::size_t block, std::size_t token, std::size_t column) const {
    return q_[index(block, token, column)] != 0;
  }
  void set(std::size_t block, std::size_t token, std::size_t column, bool on) {
    q_[index(block, token, column)] = on ? 1 : 0;
  }

  // Number of columns selected by one token.
  std::size_t row_count(std::size_t block, std::size_t token) const {
    std::size_t c = 0;
    for (std::size_t k = 0; k < columns_; ++k) c += q_[index(block, token, k)];
    return c;
  }

  // q^i_k: tokens of `block` assigned to `column`.
  std::size_t load(std::size_t block, std::size_t column) const {
    std::size_t c = 0;
    for (std::size_t j = 0; j < tokens_; ++j) c += q_[index(block, j, column)];
    return c;
  }

  // Selected (token, column) pairs across all blocks.
  std::size_t active_pairs() const {
    std::size_t c = 0;
    for (auto v : q_) c += v;
    return c;
  }

  // Copies block 0 of a single-block matrix into `block`.
  void assign_block(std::size_t block, const SelectionMatrix& single) {
    if (single.tokens_ != tokens_ || single.columns_ != columns_ || single.blocks_ < 1)
      throw std::invalid_argument("SelectionMatrix::assign_block: shape mismatch");
    for (std::size_t j = 0; j < tokens_; ++j)
      for (std::size_t k = 0; k < columns_; ++k) set(block, j, k, single.selected(0, j, k));
  }

  bool every_row_nonempty() const {
    for (std::size_t i = 0; i < blocks_; ++i)
      for (std::size_t j = 0; j < tokens_; ++j)
        if (row_count(i, j) == 0) return false;
    return true;
  }

  friend bool operator==(const SelectionMatrix&, const SelectionMatrix&) = default;

 private:
  std::size_t index(std::size_t block, std::size_t token, std::size_t column) const {
    return (block * tokens_ + token) * columns_ + column;
  }

  std::size_t blocks_ = 0;
  std::size_t tokens_ = 0;
  std::size_t columns_ = 0;
  std::vector<std::uint8_t> q_;
};

}  // namespace wdmoe
