#pragma once

#include <functional>
#include <vector>

#include "smartnet/common.hpp"
#include "smartnet/tensor.hpp"

namespace smartnet {

// Reverse-mode tape. Forward ops push one closure per recorded operation;
// backward() replays them in reverse order exactly once.
template <typename T>
class TapeT {
 public:
  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

  size_t recorded() const { return steps_.size(); }
  bool used() const { return used_; }

  void backward(const TensorPtr<T>& loss) {
    if (used_) throw UsageError("tape: backward already ran for this forward build");
    if (!loss || loss->size() != 1) throw UsageError("tape: loss must be a scalar tensor");
    used_ = true;
    loss->ensure_grad();
    loss->g[0] += T(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> steps_;
  bool used_ = false;
};

}  // namespace smartnet
