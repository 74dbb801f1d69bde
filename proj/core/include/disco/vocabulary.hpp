#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace disco {

/// Prefix-structured concept identifier: four 8-bit level fields, most
/// significant byte first. A zero field means "nothing allocated below".
struct ConceptId {
  std::uint32_t value = 0;

  static constexpr int kMaxDepth = 4;

  constexpr std::uint8_t level(int i) const {  // i in [1, 4]
    return static_cast<std::uint8_t>(value >> (8 * (kMaxDepth - i)));
  }
  constexpr int depth() const {
    int d = 0;
    while (d < kMaxDepth && level(d + 1) != 0) ++d;
    return d;
  }
  constexpr ConceptId parent() const {
    int d = depth();
    if (d == 0) return {};
    return ConceptId{value & ~(0xFFu << (8 * (kMaxDepth - d)))};
  }
  constexpr ConceptId child(std::uint8_t field) const {
    int d = depth();
    return ConceptId{value | (static_cast<std::uint32_t>(field) << (8 * (kMaxDepth - d - 1)))};
  }
  /// True when `other` lies strictly below this concept.
  constexpr bool is_ancestor_of(ConceptId other) const;

  constexpr auto operator<=>(const ConceptId&) const = default;
};

/// Wildcard subscription target, expressed as a prefix mask over ConceptId
/// in the same way as an IPv4 subnet.
struct ConceptPattern {
  ConceptId id;
  std::uint8_t prefix_bits = 32;  // one of 8, 16, 24, 32

  static ConceptPattern exact(ConceptId id) { return {id, 32}; }
  /// Validating constructor; throws InvalidSpec on a bad mask.
  static ConceptPattern make(ConceptId id, int prefix_bits);

  constexpr std::uint32_t mask() const {
    return prefix_bits == 0 ? 0u : ~0u << (32 - prefix_bits);
  }
  constexpr bool matches(ConceptId candidate) const {
    return (candidate.value & mask()) == id.value;
  }
  /// True when every id matched by `other` is matched by this pattern.
  constexpr bool covers(const ConceptPattern& other) const {
    return prefix_bits <= other.prefix_bits && matches(other.id);
  }
  /// The pattern truncated to `bits` (which must not exceed prefix_bits).
  constexpr ConceptPattern truncated(int bits) const {
    ConceptPattern p{id, static_cast<std::uint8_t>(bits)};
    p.id.value &= p.mask();
    return p;
  }

  constexpr auto operator<=>(const ConceptPattern&) const = default;
};

constexpr bool matches(const ConceptPattern& pattern, ConceptId id) { return pattern.matches(id); }

constexpr bool ConceptId::is_ancestor_of(ConceptId other) const {
  int d = depth();
  if (d >= other.depth()) return false;
  return ConceptPattern{*this, static_cast<std::uint8_t>(8 * d)}.matches(other);
}

/// Longest common byte-aligned prefix of two patterns.
ConceptPattern common_prefix(const ConceptPattern& a, const ConceptPattern& b);

std::string to_hex(ConceptId id);              // "ca:fe:01:00"
std::string to_string(const ConceptPattern&);  // "ca:fe:00:00/16"

/// Parsed dotted concept name. Names deeper than four levels are folded so
/// that the fourth token carries the whole remaining suffix.
class ConceptPath {
 public:
  /// Accepts "a.b.c", "a.b.*" and "a.b*"; throws InvalidPath otherwise.
  static ConceptPath parse(std::string_view dotted);

  const std::vector<std::string>& segments() const { return segments_; }
  bool wildcard() const { return wildcard_; }
  std::size_t depth() const { return segments_.size(); }
  ConceptPath parent_path() const;
  std::string str() const;  // without the wildcard

 private:
  std::vector<std::string> segments_;
  bool wildcard_ = false;
};

/// Vocabulary Specification Tree: a deterministic, prefix-preserving
/// allocation of ConceptIds to dotted concept names. Built once before a
/// run and shared read-only afterwards.
class VocabularyTree {
 public:
  /// Registers `path` (and any missing ancestors). Idempotent.
  /// Throws DepthExceeded, LevelExhausted or InvalidPath.
  ConceptId add(std::string_view dotted);
  ConceptId add(const ConceptPath& path);

  /// Exact id for plain names (prefix 32), prefix pattern for "name.*".
  /// Throws UnknownPath.
  ConceptPattern resolve(std::string_view dotted) const;
  ConceptId id_of(std::string_view dotted) const;  // non-wildcard only

  bool contains(std::string_view dotted) const;
  /// Inverse lookup; throws UnknownPath for ids never allocated.
  const std::string& name(ConceptId id) const;
  std::size_t size() const { return by_name_.size(); }

  /// One dotted name per line, optionally followed by its expected hex id;
  /// blank lines and '#' comments are skipped. Throws InvalidPath on an id mismatch.
  static VocabularyTree load(std::istream& in);
  /// "path<TAB>hex-id" per line in id order.
  void dump(std::ostream& out) const;

 private:
  std::unordered_map<std::string, ConceptId> by_name_;
  std::map<std::uint32_t, std::string> by_id_;
  std::unordered_map<std::uint32_t, std::uint16_t> next_child_;  // parent id -> next free field
};

}  // namespace disco
