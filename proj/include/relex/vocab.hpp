#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "relex/text.hpp"

namespace relex {

inline constexpr const char* kPadToken = "[PAD]";
inline constexpr const char* kUnkToken = "[UNK]";
inline constexpr const char* kClsToken = "[CLS]";
inline constexpr const char* kSepToken = "[SEP]";

// WordPiece-style vocabulary: whole words above a frequency threshold plus
// every character seen at build time (and its "##"-prefixed continuation
// form), with the special tokens appended at the end of the id space.
// Specials are atomic; [UNK] only ever stands for unseen characters.
struct SubwordVocab {
  std::vector<std::string> pieces;
  std::unordered_map<std::string, int> piece_ids;
  int pad_id = -1;
  int unk_id = -1;
  int cls_id = -1;
  int sep_id = -1;
  int subject_marker_id = -1;
  int object_marker_id = -1;
  int overlap_marker_id = -1;

  std::size_t size() const { return pieces.size(); }
  int id_of(const std::string& piece) const;
  bool is_special(int id) const;
  void rebuild_lookup();
};

SubwordVocab build_vocab(const std::vector<std::string>& texts, int min_word_freq = 2);

struct Tokenized {
  std::vector<int> ids;           // [CLS] pieces... [SEP]
  std::vector<TokenSpan> tokens;  // pre-split tokens of the input text
  // Per token, the contiguous [first, last) range of positions in `ids`;
  // [CLS] and [SEP] are excluded from every range.
  std::vector<std::pair<int, int>> token_to_subword;
};

// Greedy longest-match segmentation of each pre-split token; continuations
// use "##" pieces; marker tokens map to their special ids.
Tokenized tokenize(std::string_view text, const SubwordVocab& vocab);

// Token surfaces reconstructed from the pieces ("##" prefixes stripped).
std::vector<std::string> detokenize(const Tokenized& tok, const SubwordVocab& vocab);

}  // namespace relex
