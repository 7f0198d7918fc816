#pragma once

#include <cstdint>
#include <cstring>
#include <string_view>

namespace salience {

/// 64-bit FNV-1a, used for config and split fingerprints.
class Fnv1a {
 public:
  void update(const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      state_ ^= bytes[i];
      state_ *= 0x100000001B3ULL;
    }
  }
  void update(std::string_view s) {
    update(s.data(), s.size());
    const unsigned char sep = 0xFF;
    update(&sep, 1);
  }
  template <typename T>
    requires std::is_trivially_copyable_v<T>
  void update_value(const T& v) {
    update(&v, sizeof(T));
  }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xCBF29CE484222325ULL;
};

inline std::uint64_t fnv1a(std::string_view s) {
  Fnv1a h;
  h.update(s);
  return h.digest();
}

}  // namespace salience
