#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dpgs/core/error.hpp"

namespace dpgs {

/// Named slots over one flat float64 buffer. Slots are laid out contiguously
/// in lexicographic name order, which is also the iteration order.
class ParamVector {
 public:
  struct Slot {
    std::string name;
    std::size_t offset = 0;
    std::size_t length = 0;
    bool operator==(const Slot&) const = default;
  };

  /// Adds (or replaces) a slot. Re-lays out the buffer.
  void add(std::string name, std::span<const double> values) {
    std::map<std::string, std::vector<double>, std::less<>> contents;
    for (const auto& s : slots_)
      contents.emplace(s.name, std::vector<double>(data_.begin() + s.offset,
                                                   data_.begin() + s.offset + s.length));
    contents[std::move(name)] = std::vector<double>(values.begin(), values.end());
    slots_.clear();
    data_.clear();
    for (auto& [n, v] : contents) {
      slots_.push_back({n, data_.size(), v.size()});
      data_.insert(data_.end(), v.begin(), v.end());
    }
  }

  bool contains(std::string_view name) const { return find(name) != nullptr; }

  std::span<double> slot(std::string_view name) {
    const Slot* s = require(name);
    return std::span<double>(data_).subspan(s->offset, s->length);
  }
  std::span<const double> slot(std::string_view name) const {
    const Slot* s = require(name);
    return std::span<const double>(data_).subspan(s->offset, s->length);
  }

  const std::vector<Slot>& layout() const noexcept { return slots_; }
  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::size_t size() const noexcept { return data_.size(); }

  /// Slot that owns flat index i.
  const Slot& slot_of(std::size_t i) const {
    for (const auto& s : slots_)
      if (i >= s.offset && i < s.offset + s.length) return s;
    throw InvalidArgument("flat index outside every slot");
  }

  ParamVector zeros_like() const {
    ParamVector z = *this;
    std::fill(z.data_.begin(), z.data_.end(), 0.0);
    return z;
  }

  bool same_layout(const ParamVector& o) const { return slots_ == o.slots_; }

  bool operator==(const ParamVector&) const = default;

 private:
  const Slot* find(std::string_view name) const {
    auto it = std::lower_bound(slots_.begin(), slots_.end(), name,
                               [](const Slot& s, std::string_view n) { return s.name < n; });
    return (it != slots_.end() && it->name == name) ? &*it : nullptr;
  }
  const Slot* require(std::string_view name) const {
    const Slot* s = find(name);
    if (!s) throw InvalidArgument("unknown parameter slot '" + std::string(name) + "'");
    return s;
  }

  std::vector<Slot> slots_;
  std::vector<double> data_;
};

/// Types that expose their learnable storage as named float spans:
/// `visit_slots(obj, fn)` calls fn(name, span) once per slot.
template <class T>
concept SlotVisitable = requires(T& t) {
  visit_slots(t, [](std::string_view, std::span<double>) {});
};

template <SlotVisitable T>
void pack_into(ParamVector& pv, const T& obj, std::string_view prefix = {}) {
  visit_slots(const_cast<T&>(obj), [&](std::string_view name, std::span<double> v) {
    pv.add(std::string(prefix) + std::string(name), v);
  });
}

template <SlotVisitable T>
ParamVector pack(const T& obj, std::string_view prefix = {}) {
  ParamVector pv;
  pack_into(pv, obj, prefix);
  return pv;
}

/// Copies slot contents into `obj`, whose shapes must already match.
template <SlotVisitable T>
void unpack(const ParamVector& pv, T& obj, std::string_view prefix = {}) {
  visit_slots(obj, [&](std::string_view name, std::span<double> v) {
    auto src = pv.slot(std::string(prefix) + std::string(name));
    if (src.size() != v.size())
      throw InvalidArgument("slot '" + std::string(name) + "' has mismatched length");
    std::copy(src.begin(), src.end(), v.begin());
  });
}

/// Adds `obj`'s slot contents into matching slots of `pv`.
template <SlotVisitable T>
void accumulate_into(ParamVector& pv, const T& obj, std::string_view prefix = {}) {
  visit_slots(const_cast<T&>(obj), [&](std::string_view name, std::span<double> v) {
    auto dst = pv.slot(std::string(prefix) + std::string(name));
    for (std::size_t i = 0; i < v.size(); ++i) dst[i] += v[i];
  });
}

}  // namespace dpgs
