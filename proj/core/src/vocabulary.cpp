#include "disco/vocabulary.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <cstdlib>

#include "disco/error.hpp"

namespace disco {

namespace {

bool valid_token(std::string_view tok) {
  if (tok.empty()) return false;
  for (char c : tok) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-' || c == '_' || c == '.';
    if (!ok) return false;
  }
  return true;
}

}  // namespace

ConceptPattern ConceptPattern::make(ConceptId id, int prefix_bits) {
  if (prefix_bits != 8 && prefix_bits != 16 && prefix_bits != 24 && prefix_bits != 32)
    throw Error(ErrorCode::kInvalidSpec, "prefix length must be 8, 16, 24 or 32");
  ConceptPattern p{id, static_cast<std::uint8_t>(prefix_bits)};
  if ((id.value & ~p.mask()) != 0)
    throw Error(ErrorCode::kInvalidSpec, "pattern id has bits set below its prefix");
  return p;
}

ConceptPattern common_prefix(const ConceptPattern& a, const ConceptPattern& b) {
  int bits = std::min(a.prefix_bits, b.prefix_bits);
  while (bits > 0 && a.truncated(bits).id != b.truncated(bits).id) bits -= 8;
  return a.truncated(bits);
}

std::string to_hex(ConceptId id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02x:%02x:%02x:%02x", id.level(1), id.level(2), id.level(3), id.level(4));
  return buf;
}

std::string to_string(const ConceptPattern& p) {
  return to_hex(p.id) + "/" + std::to_string(p.prefix_bits);
}

ConceptPath ConceptPath::parse(std::string_view dotted) {
  ConceptPath path;
  std::string_view rest = dotted;
  if (rest.ends_with(".*")) {
    path.wildcard_ = true;
    rest.remove_suffix(2);
  } else if (rest.ends_with("*")) {
    path.wildcard_ = true;
    rest.remove_suffix(1);
  }
  std::vector<std::string> tokens;
  while (true) {
    auto dot = rest.find('.');
    auto tok = rest.substr(0, dot);
    if (tok.empty() || tok.find('*') != std::string_view::npos || !valid_token(tok))
      throw Error(ErrorCode::kInvalidPath, "bad concept name '" + std::string(dotted) + "'");
    tokens.emplace_back(tok);
    if (dot == std::string_view::npos) break;
    rest.remove_prefix(dot + 1);
  }
  if (tokens.size() > static_cast<std::size_t>(ConceptId::kMaxDepth)) {
    std::string suffix = tokens[ConceptId::kMaxDepth - 1];
    for (std::size_t i = ConceptId::kMaxDepth; i < tokens.size(); ++i) suffix += "." + tokens[i];
    tokens.resize(ConceptId::kMaxDepth);
    tokens.back() = std::move(suffix);
  }
  path.segments_ = std::move(tokens);
  return path;
}

ConceptPath ConceptPath::parent_path() const {
  ConceptPath p;
  p.segments_.assign(segments_.begin(), segments_.end() - 1);
  return p;
}

std::string ConceptPath::str() const {
  std::string s;
  for (const auto& seg : segments_) {
    if (!s.empty()) s += '.';
    s += seg;
  }
  return s;
}

ConceptId VocabularyTree::add(std::string_view dotted) { return add(ConceptPath::parse(dotted)); }

ConceptId VocabularyTree::add(const ConceptPath& path) {
  if (path.wildcard()) throw Error(ErrorCode::kInvalidPath, "cannot register a wildcard name");
  if (path.depth() > static_cast<std::size_t>(ConceptId::kMaxDepth))
    throw Error(ErrorCode::kDepthExceeded, path.str());
  auto name = path.str();
  if (auto it = by_name_.find(name); it != by_name_.end()) return it->second;

  ConceptId parent{};
  if (path.depth() > 1) parent = add(path.parent_path());

  auto& next = next_child_[parent.value];
  if (next == 0) next = 1;
  if (next > 0xFF) throw Error(ErrorCode::kLevelExhausted, name);
  ConceptId id = parent.child(static_cast<std::uint8_t>(next++));
  by_name_.emplace(name, id);
  by_id_.emplace(id.value, std::move(name));
  return id;
}

ConceptPattern VocabularyTree::resolve(std::string_view dotted) const {
  auto path = ConceptPath::parse(dotted);
  auto it = by_name_.find(path.str());
  if (it == by_name_.end()) throw Error(ErrorCode::kUnknownPath, std::string(dotted));
  if (!path.wildcard()) return ConceptPattern::exact(it->second);
  return ConceptPattern{it->second, static_cast<std::uint8_t>(8 * path.depth())};
}

ConceptId VocabularyTree::id_of(std::string_view dotted) const {
  auto p = resolve(dotted);
  if (p.prefix_bits != 32 || ConceptPath::parse(dotted).wildcard())
    throw Error(ErrorCode::kInvalidPath, "expected a concrete name: " + std::string(dotted));
  return p.id;
}

bool VocabularyTree::contains(std::string_view dotted) const {
  try {
    return by_name_.contains(ConceptPath::parse(dotted).str());
  } catch (const Error&) {
    return false;
  }
}

const std::string& VocabularyTree::name(ConceptId id) const {
  auto it = by_id_.find(id.value);
  if (it == by_id_.end()) throw Error(ErrorCode::kUnknownPath, "no concept with id " + to_hex(id));
  return it->second;
}

VocabularyTree VocabularyTree::load(std::istream& in) {
  VocabularyTree tree;
  std::string line;
  while (std::getline(in, line)) {
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line.substr(first));
    std::string name, hex;
    fields >> name >> hex;
    auto id = tree.add(name);
    // optional id column, as written by dump()
    if (!hex.empty() && !hex.starts_with("#")) {
      char* end = nullptr;
      auto want = std::strtoul(hex.c_str(), &end, 16);
      if (*end != '\0' || want != id.value)
        throw Error(ErrorCode::kInvalidPath, name + " is " + to_hex(id) + ", file says " + hex);
    }
  }
  return tree;
}

void VocabularyTree::dump(std::ostream& out) const {
  for (const auto& [value, name] : by_id_) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x", value);
    out << name << '\t' << buf << '\n';
  }
}

}  // namespace disco
