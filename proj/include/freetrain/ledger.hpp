#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace freetrain {

/// Exact counters of forward passes, backward passes and SGD updates, plus an
/// ordered event log. Delta (perturbation) updates are logged as well so the
/// update order inside a training repetition can be asserted.
class CostLedger {
 public:
  enum class Event : std::uint8_t { Forward, Backward, SgdUpdate, DeltaUpdate };

  void record(Event e) {
    events_.emplace_back(next_seq_++, e);
    switch (e) {
      case Event::Forward: ++forward_count_; break;
      case Event::Backward: ++backward_count_; break;
      case Event::SgdUpdate: ++sgd_update_count_; break;
      case Event::DeltaUpdate: ++delta_update_count_; break;
    }
  }

  std::uint64_t forward_count() const { return forward_count_; }
  std::uint64_t backward_count() const { return backward_count_; }
  std::uint64_t sgd_update_count() const { return sgd_update_count_; }
  std::uint64_t delta_update_count() const { return delta_update_count_; }

  const std::vector<std::pair<std::uint64_t, Event>>& events() const {
    return events_;
  }

 private:
  std::uint64_t next_seq_ = 0;
  std::uint64_t forward_count_ = 0;
  std::uint64_t backward_count_ = 0;
  std::uint64_t sgd_update_count_ = 0;
  std::uint64_t delta_update_count_ = 0;
  std::vector<std::pair<std::uint64_t, Event>> events_;
};

}  // namespace freetrain
