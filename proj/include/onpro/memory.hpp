#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "onpro/numerics.hpp"
#include "onpro/stream.hpp"

namespace onpro {

/// Fixed-capacity replay memory with reservoir replacement.
class MemoryBank {
 public:
  explicit MemoryBank(std::size_t capacity) : capacity_(capacity) {}

  /// Offers every sample of `batch` in order. While the bank has room the
  /// sample is stored; afterwards it overwrites a uniformly chosen slot with
  /// probability capacity / seen_count (one draw per offered sample).
  void update(std::span<const Sample> batch, Rng& rng);

  /// min(k, size()) distinct slots, uniformly without replacement.
  std::vector<Sample> sample_uniform(std::size_t k, Rng& rng) const;

  /// k samples of `first` followed by k samples of `second`, uniform within
  /// each class; without replacement when a class holds at least k samples,
  /// i.i.d. with replacement otherwise. Throws ClassUnavailable when either
  /// class has no stored sample.
  std::pair<std::vector<Sample>, std::vector<Sample>> samples_of_classes(ClassId first,
                                                                          ClassId second,
                                                                          std::size_t k,
                                                                          Rng& rng) const;

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return slots_.size(); }
  bool empty() const noexcept { return slots_.empty(); }
  std::size_t seen_count() const noexcept { return seen_; }
  const std::vector<Sample>& slots() const noexcept { return slots_; }

  bool contains(ClassId c) const { return index_.count(c) > 0; }
  /// Slot positions currently holding class `c` (empty if none).
  std::span<const std::size_t> class_slots(ClassId c) const;
  std::vector<ClassId> classes() const;
  std::vector<Sample> samples_of(ClassId c) const;

 private:
  void index_insert(ClassId c, std::size_t slot);
  void index_erase(ClassId c, std::size_t slot);
  std::vector<Sample> draw_from_class(ClassId c, std::size_t k, Rng& rng) const;

  std::size_t capacity_;
  std::vector<Sample> slots_;
  std::size_t seen_ = 0;
  std::map<ClassId, std::vector<std::size_t>> index_;
};

}  // namespace onpro
