#include "onpro/memory.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "onpro/errors.hpp"

namespace onpro {

void MemoryBank::index_insert(ClassId c, std::size_t slot) {
  auto& v = index_[c];
  v.insert(std::lower_bound(v.begin(), v.end(), slot), slot);
}

void MemoryBank::index_erase(ClassId c, std::size_t slot) {
  auto it = index_.find(c);
  auto& v = it->second;
  v.erase(std::lower_bound(v.begin(), v.end(), slot));
  if (v.empty()) index_.erase(it);
}

void MemoryBank::update(std::span<const Sample> batch, Rng& rng) {
  for (const Sample& s : batch) {
    ++seen_;
    if (capacity_ == 0) continue;
    if (slots_.size() < capacity_) {
      slots_.push_back(s);
      index_insert(s.label, slots_.size() - 1);
      continue;
    }
    const std::size_t j = sample_index(rng, seen_);
    if (j < capacity_) {
      index_erase(slots_[j].label, j);
      slots_[j] = s;
      index_insert(s.label, j);
    }
  }
}

std::vector<Sample> MemoryBank::sample_uniform(std::size_t k, Rng& rng) const {
  const std::size_t n = std::min(k, slots_.size());
  std::vector<std::size_t> idx(slots_.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Partial Fisher-Yates: the first n positions become a uniform n-subset.
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + sample_index(rng, idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(slots_[idx[i]]);
  return out;
}

std::span<const std::size_t> MemoryBank::class_slots(ClassId c) const {
  auto it = index_.find(c);
  if (it == index_.end()) return {};
  return it->second;
}

std::vector<ClassId> MemoryBank::classes() const {
  std::vector<ClassId> out;
  out.reserve(index_.size());
  for (const auto& [c, _] : index_) out.push_back(c);
  return out;
}

std::vector<Sample> MemoryBank::samples_of(ClassId c) const {
  std::vector<Sample> out;
  for (std::size_t slot : class_slots(c)) out.push_back(slots_[slot]);
  return out;
}

std::vector<Sample> MemoryBank::draw_from_class(ClassId c, std::size_t k, Rng& rng) const {
  std::vector<std::size_t> members(class_slots(c).begin(), class_slots(c).end());
  std::vector<Sample> out;
  out.reserve(k);
  if (members.size() >= k) {
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + sample_index(rng, members.size() - i);
      std::swap(members[i], members[j]);
      out.push_back(slots_[members[i]]);
    }
  } else {
    for (std::size_t i = 0; i < k; ++i) {
      out.push_back(slots_[members[sample_index(rng, members.size())]]);
    }
  }
  return out;
}

std::pair<std::vector<Sample>, std::vector<Sample>> MemoryBank::samples_of_classes(
    ClassId first, ClassId second, std::size_t k, Rng& rng) const {
  for (ClassId c : {first, second}) {
    if (!contains(c)) throw ClassUnavailable("class " + std::to_string(c) + " is not in the bank");
  }
  auto a = draw_from_class(first, k, rng);
  auto b = draw_from_class(second, k, rng);
  return {std::move(a), std::move(b)};
}

}  // namespace onpro
