#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace relex {

struct TreeParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A node of a bracketed constituency tree. Leaves carry the token surface
// and consecutive token indices 0..T-1 in left-to-right order.
struct ConstTree {
  std::string label;
  std::vector<ConstTree> children;
  std::string token;    // leaves only
  int token_index = -1;  // leaves only

  bool is_leaf() const { return children.empty(); }
  bool operator==(const ConstTree& other) const;
};

enum class ChunkKind { kNP, kVP, kSingleton };

const char* chunk_kind_name(ChunkKind k);

// Token-index range of one chunk; chunks are non-overlapping, ordered,
// and together tile [0, T).
struct ChunkSpan {
  ChunkKind kind = ChunkKind::kSingleton;
  int token_start = 0;
  int token_end = 0;  // exclusive

  bool operator==(const ChunkSpan& other) const = default;
};

// Parses a Penn-style bracketed expression "(LABEL child ...)" with leaf
// form "(POS token)". Throws TreeParseError on unbalanced parentheses,
// empty nodes, or bare tokens outside a POS pair.
ConstTree parse_bracketed(std::string_view s);

std::string to_bracketed(const ConstTree& tree);

std::vector<std::string> leaf_tokens(const ConstTree& tree);
int leaf_count(const ConstTree& tree);

// Base category before any function tag: "NP-SBJ" -> "NP", "S=1" -> "S".
std::string base_label(std::string_view label);

// Depth-first collection of every NP or VP node with no NP/VP descendant;
// tokens not covered by any such node become SINGLETON chunks.
std::vector<ChunkSpan> extract_chunks(const ConstTree& tree);

// Maps each chunk's token range onto the union of its tokens' contiguous
// subword ranges. token_to_subword[t] = [first, last) subword positions of
// token t. The resulting ranges partition the mapped subword interval.
std::vector<std::pair<int, int>> align_chunks_to_subwords(
    const std::vector<ChunkSpan>& chunks,
    const std::vector<std::pair<int, int>>& token_to_subword);

// Trees file: one bracketed tree per line, aligned 1:1 with the rows of an
// instances file; '#' starts a comment line.
std::vector<ConstTree> read_trees_file(const std::string& path);
void write_trees_file(const std::string& path, const std::vector<ConstTree>& trees);

}  // namespace relex
