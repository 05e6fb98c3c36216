#include "relex/vocab.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace relex {

namespace {

// Splits a UTF-8 string into per-code-point strings.
std::vector<std::string> code_points(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t j = i + 1;
    while (j < s.size() && (static_cast<unsigned char>(s[j]) & 0xC0) == 0x80) ++j;
    out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

int SubwordVocab::id_of(const std::string& piece) const {
  auto it = piece_ids.find(piece);
  return it == piece_ids.end() ? -1 : it->second;
}

bool SubwordVocab::is_special(int id) const {
  return id == pad_id || id == unk_id || id == cls_id || id == sep_id ||
         id == subject_marker_id || id == object_marker_id || id == overlap_marker_id;
}

void SubwordVocab::rebuild_lookup() {
  piece_ids.clear();
  for (std::size_t i = 0; i < pieces.size(); ++i) piece_ids[pieces[i]] = static_cast<int>(i);
  pad_id = id_of(kPadToken);
  unk_id = id_of(kUnkToken);
  cls_id = id_of(kClsToken);
  sep_id = id_of(kSepToken);
  subject_marker_id = id_of(std::string(kSubjectMarker));
  object_marker_id = id_of(std::string(kObjectMarker));
  overlap_marker_id = id_of(std::string(kOverlapMarker));
}

SubwordVocab build_vocab(const std::vector<std::string>& texts, int min_word_freq) {
  std::map<std::string, long long> word_counts;
  std::set<std::string> chars;
  const std::set<std::string> reserved = {
      kPadToken, kUnkToken, kClsToken, kSepToken,
      std::string(kSubjectMarker), std::string(kObjectMarker), std::string(kOverlapMarker)};

  for (const std::string& text : texts) {
    for (const TokenSpan& tok : pre_split(text)) {
      if (tok.is_marker) continue;
      ++word_counts[tok.surface];
      for (const std::string& cp : code_points(tok.surface)) chars.insert(cp);
    }
  }

  SubwordVocab vocab;
  for (const auto& [word, count] : word_counts) {
    if (count >= min_word_freq && reserved.count(word) == 0) vocab.pieces.push_back(word);
  }
  for (const std::string& cp : chars) {
    if (word_counts.count(cp) == 0 || word_counts[cp] < min_word_freq) {
      vocab.pieces.push_back(cp);
    }
  }
  for (const std::string& cp : chars) vocab.pieces.push_back("##" + cp);
  for (const std::string& special : {std::string(kPadToken), std::string(kUnkToken),
                                     std::string(kClsToken), std::string(kSepToken),
                                     std::string(kSubjectMarker), std::string(kObjectMarker),
                                     std::string(kOverlapMarker)}) {
    vocab.pieces.push_back(special);
  }
  vocab.rebuild_lookup();
  return vocab;
}

Tokenized tokenize(std::string_view text, const SubwordVocab& vocab) {
  Tokenized out;
  out.tokens = pre_split(text);
  out.ids.push_back(vocab.cls_id);
  for (const TokenSpan& tok : out.tokens) {
    const int first = static_cast<int>(out.ids.size());
    if (tok.is_marker) {
      out.ids.push_back(vocab.id_of(tok.surface));
    } else {
      const std::vector<std::string> cps = code_points(tok.surface);
      std::size_t pos = 0;
      while (pos < cps.size()) {
        // Greedy longest match over code point boundaries.
        int best_len = 0;
        int best_id = -1;
        std::string candidate;
        for (std::size_t end = pos; end < cps.size(); ++end) {
          candidate += cps[end];
          const std::string piece = pos == 0 ? candidate : "##" + candidate;
          const int id = vocab.id_of(piece);
          if (id >= 0 && !vocab.is_special(id)) {
            best_len = static_cast<int>(end - pos + 1);
            best_id = id;
          }
        }
        if (best_id < 0) {
          out.ids.push_back(vocab.unk_id);  // unseen character
          pos += 1;
        } else {
          out.ids.push_back(best_id);
          pos += best_len;
        }
      }
    }
    out.token_to_subword.emplace_back(first, static_cast<int>(out.ids.size()));
  }
  out.ids.push_back(vocab.sep_id);
  return out;
}

std::vector<std::string> detokenize(const Tokenized& tok, const SubwordVocab& vocab) {
  std::vector<std::string> out;
  for (const auto& [first, last] : tok.token_to_subword) {
    std::string word;
    for (int i = first; i < last; ++i) {
      const std::string& piece = vocab.pieces[tok.ids[i]];
      word += piece.rfind("##", 0) == 0 && i > first ? piece.substr(2) : piece;
    }
    out.push_back(std::move(word));
  }
  return out;
}

}  // namespace relex
