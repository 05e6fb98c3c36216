#include "relex/syntax.hpp"

#include <algorithm>
#include <fstream>

namespace relex {

namespace {

bool is_ws(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r';
}

struct Parser {
  std::string_view s;
  std::size_t pos = 0;

  void skip_ws() {
    while (pos < s.size() && is_ws(s[pos])) ++pos;
  }

  [[noreturn]] void fail(const std::string& msg) {
    throw TreeParseError("tree parse error at byte " + std::to_string(pos) + ": " + msg);
  }

  std::string read_atom() {
    std::size_t start = pos;
    while (pos < s.size() && !is_ws(s[pos]) && s[pos] != '(' && s[pos] != ')') ++pos;
    return std::string(s.substr(start, pos - start));
  }

  ConstTree parse_node(int* next_token_index) {
    skip_ws();
    if (pos >= s.size() || s[pos] != '(') fail("expected '('");
    ++pos;
    skip_ws();
    ConstTree node;
    node.label = read_atom();
    if (node.label.empty()) fail("empty node label");
    skip_ws();
    if (pos >= s.size()) fail("unbalanced parentheses");
    if (s[pos] == ')') fail("empty node: (" + node.label + ")");

    if (s[pos] != '(') {
      // Leaf form "(POS token)".
      node.token = read_atom();
      if (node.token.empty()) fail("empty leaf token");
      node.token_index = (*next_token_index)++;
      skip_ws();
      if (pos >= s.size() || s[pos] != ')') {
        fail("leaf node (" + node.label + " " + node.token + " must close after its token");
      }
      ++pos;
      return node;
    }
    while (true) {
      skip_ws();
      if (pos >= s.size()) fail("unbalanced parentheses");
      if (s[pos] == ')') {
        ++pos;
        return node;
      }
      if (s[pos] != '(') {
        fail("bare token \"" + read_atom() + "\" outside a POS pair under (" + node.label + ")");
      }
      node.children.push_back(parse_node(next_token_index));
    }
  }
};

void collect_leaves(const ConstTree& t, std::vector<const ConstTree*>* out) {
  if (t.is_leaf()) {
    out->push_back(&t);
    return;
  }
  for (const ConstTree& c : t.children) collect_leaves(c, out);
}

bool is_np_or_vp(const ConstTree& t) {
  if (t.is_leaf()) return false;
  const std::string base = base_label(t.label);
  return base == "NP" || base == "VP";
}

bool has_np_vp_descendant(const ConstTree& t) {
  for (const ConstTree& c : t.children) {
    if (is_np_or_vp(c) || has_np_vp_descendant(c)) return true;
  }
  return false;
}

void token_range(const ConstTree& t, int* lo, int* hi) {
  if (t.is_leaf()) {
    *lo = std::min(*lo, t.token_index);
    *hi = std::max(*hi, t.token_index + 1);
    return;
  }
  for (const ConstTree& c : t.children) token_range(c, lo, hi);
}

void collect_minimal(const ConstTree& t, std::vector<ChunkSpan>* out) {
  if (is_np_or_vp(t) && !has_np_vp_descendant(t)) {
    int lo = leaf_count(t) > 0 ? 1 << 30 : 0;
    int hi = 0;
    token_range(t, &lo, &hi);
    ChunkKind kind = base_label(t.label) == "NP" ? ChunkKind::kNP : ChunkKind::kVP;
    out->push_back({kind, lo, hi});
    return;  // nothing below can be NP/VP
  }
  for (const ConstTree& c : t.children) collect_minimal(c, out);
}

}  // namespace

bool ConstTree::operator==(const ConstTree& other) const {
  return label == other.label && token == other.token && token_index == other.token_index &&
         children == other.children;
}

const char* chunk_kind_name(ChunkKind k) {
  switch (k) {
    case ChunkKind::kNP: return "NP";
    case ChunkKind::kVP: return "VP";
    default: return "SINGLETON";
  }
}

ConstTree parse_bracketed(std::string_view s) {
  long long depth = 0;
  for (char c : s) {
    if (c == '(') ++depth;
    if (c == ')' && --depth < 0) throw TreeParseError("unbalanced parentheses: early ')'");
  }
  if (depth != 0) {
    throw TreeParseError("unbalanced parentheses: " + std::to_string(depth) + " unclosed");
  }
  Parser p{s};
  int next_index = 0;
  ConstTree root = p.parse_node(&next_index);
  p.skip_ws();
  if (p.pos != s.size()) p.fail("unbalanced parentheses: trailing content after root");
  return root;
}

std::string to_bracketed(const ConstTree& tree) {
  std::string out = "(" + tree.label;
  if (tree.is_leaf()) {
    out += " " + tree.token;
  } else {
    for (const ConstTree& c : tree.children) out += " " + to_bracketed(c);
  }
  out += ")";
  return out;
}

std::vector<std::string> leaf_tokens(const ConstTree& tree) {
  std::vector<const ConstTree*> leaves;
  collect_leaves(tree, &leaves);
  std::vector<std::string> out;
  out.reserve(leaves.size());
  for (const ConstTree* l : leaves) out.push_back(l->token);
  return out;
}

int leaf_count(const ConstTree& tree) {
  if (tree.is_leaf()) return 1;
  int n = 0;
  for (const ConstTree& c : tree.children) n += leaf_count(c);
  return n;
}

std::string base_label(std::string_view label) {
  std::size_t cut = label.find_first_of("-=|");
  if (cut == 0) return std::string(label);  // tags like -NONE- keep their name
  return std::string(label.substr(0, cut));
}

std::vector<ChunkSpan> extract_chunks(const ConstTree& tree) {
  std::vector<ChunkSpan> minimal;
  collect_minimal(tree, &minimal);
  std::sort(minimal.begin(), minimal.end(), [](const ChunkSpan& a, const ChunkSpan& b) {
    return a.token_start < b.token_start;
  });
  const int total = leaf_count(tree);
  std::vector<ChunkSpan> chunks;
  int cursor = 0;
  for (const ChunkSpan& m : minimal) {
    for (; cursor < m.token_start; ++cursor) {
      chunks.push_back({ChunkKind::kSingleton, cursor, cursor + 1});
    }
    chunks.push_back(m);
    cursor = m.token_end;
  }
  for (; cursor < total; ++cursor) chunks.push_back({ChunkKind::kSingleton, cursor, cursor + 1});
  return chunks;
}

std::vector<std::pair<int, int>> align_chunks_to_subwords(
    const std::vector<ChunkSpan>& chunks,
    const std::vector<std::pair<int, int>>& token_to_subword) {
  std::vector<std::pair<int, int>> out;
  out.reserve(chunks.size());
  for (const ChunkSpan& chunk : chunks) {
    if (chunk.token_start < 0 || chunk.token_end > static_cast<int>(token_to_subword.size()) ||
        chunk.token_start >= chunk.token_end) {
      throw std::out_of_range("chunk token range outside token_to_subword map");
    }
    int first = token_to_subword[chunk.token_start].first;
    int last = token_to_subword[chunk.token_end - 1].second;
    for (int t = chunk.token_start; t < chunk.token_end; ++t) {
      if (token_to_subword[t].first >= token_to_subword[t].second) {
        throw std::out_of_range("token " + std::to_string(t) + " has an empty subword range");
      }
    }
    out.emplace_back(first, last);
  }
  return out;
}

std::vector<ConstTree> read_trees_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TreeParseError("cannot open " + path);
  std::vector<ConstTree> trees;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line[0] == '#') continue;
    try {
      trees.push_back(parse_bracketed(line));
    } catch (const TreeParseError& e) {
      throw TreeParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return trees;
}

void write_trees_file(const std::string& path, const std::vector<ConstTree>& trees) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TreeParseError("cannot write " + path);
  for (const ConstTree& t : trees) out << to_bracketed(t) << '\n';
}

}  // namespace relex
