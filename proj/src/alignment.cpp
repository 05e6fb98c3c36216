#include "relex/alignment.hpp"

#include <algorithm>

namespace relex {

namespace {

std::string describe(const CandidateInstance& inst) {
  return inst.doc_id + "/" + inst.subject_id + "/" + inst.object_id;
}

}  // namespace

EncodedInstance encode_instance(const CandidateInstance& inst, const ConstTree* tree,
                                const SubwordVocab& vocab, ModelFamily family) {
  EncodedInstance out;
  out.doc_id = inst.doc_id;
  out.subject_id = inst.subject_id;
  out.object_id = inst.object_id;
  out.gold_labels = inst.gold_labels;

  Tokenized tok = tokenize(inst.marked_text, vocab);
  out.subword_ids = tok.ids;
  out.n_real_subwords = static_cast<int>(tok.ids.size());
  out.token_to_subword = tok.token_to_subword;

  if (family == ModelFamily::kPlain) return out;
  if (tree == nullptr) {
    throw AlignmentError("constituent family requires a tree for instance " + describe(inst));
  }

  std::vector<MarkerOccurrence> markers;
  const std::string original = strip_markers(inst.marked_text, &markers);
  const std::vector<TokenSpan> orig_tokens = pre_split(original);
  const std::vector<std::string> leaves = leaf_tokens(*tree);
  if (leaves.size() != orig_tokens.size()) {
    throw AlignmentError("tree for " + describe(inst) + " has " + std::to_string(leaves.size()) +
                         " leaves but the sentence has " + std::to_string(orig_tokens.size()) +
                         " tokens");
  }
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    if (leaves[i] != orig_tokens[i].surface) {
      throw AlignmentError("tree leaf " + std::to_string(i) + " (\"" + leaves[i] +
                           "\") does not match token \"" + orig_tokens[i].surface + "\" for " +
                           describe(inst));
    }
  }

  const std::vector<ChunkSpan> chunks = extract_chunks(*tree);

  // Original token index owning each original byte position.
  auto orig_token_at = [&](std::size_t orig_pos) -> int {
    for (std::size_t t = 0; t < orig_tokens.size(); ++t) {
      if (orig_pos >= orig_tokens[t].start && orig_pos < orig_tokens[t].end) {
        return static_cast<int>(t);
      }
    }
    return -1;
  };
  // Byte position in the original text for a non-marker byte of the
  // marked text: subtract the markers inserted before it.
  auto to_original = [&](std::size_t marked_pos) -> std::size_t {
    std::size_t shift = 0;
    for (const MarkerOccurrence& m : markers) {
      if (m.pos_marked < marked_pos) shift += m.marker.size();
    }
    return marked_pos - shift;
  };

  struct PendingUnit {
    std::size_t sort_key;  // first byte position in the marked text
    EncodedInstance::Unit unit;
  };
  std::vector<PendingUnit> pending;

  // One unit per chunk, collecting the marked tokens whose original token
  // falls inside the chunk's range.
  std::vector<int> chunk_of_token(orig_tokens.size(), -1);
  for (std::size_t c = 0; c < chunks.size(); ++c) {
    for (int t = chunks[c].token_start; t < chunks[c].token_end; ++t) {
      chunk_of_token[t] = static_cast<int>(c);
    }
  }
  std::vector<PendingUnit> chunk_units(chunks.size());
  for (std::size_t c = 0; c < chunks.size(); ++c) {
    chunk_units[c].sort_key = static_cast<std::size_t>(-1);
    chunk_units[c].unit.kind = chunks[c].kind;
    chunk_units[c].unit.is_marker = false;
  }

  std::size_t next_marker = 0;
  for (std::size_t mt = 0; mt < tok.tokens.size(); ++mt) {
    const TokenSpan& span = tok.tokens[mt];
    if (span.is_marker) {
      if (next_marker >= markers.size() || markers[next_marker].pos_marked != span.start) {
        throw AlignmentError("marker bookkeeping mismatch for " + describe(inst));
      }
      PendingUnit pu;
      pu.sort_key = span.start;
      pu.unit.kind = ChunkKind::kSingleton;
      pu.unit.is_marker = true;
      pu.unit.token_indices = {static_cast<int>(mt)};
      pending.push_back(std::move(pu));
      ++next_marker;
      continue;
    }
    const int ot = orig_token_at(to_original(span.start));
    if (ot < 0 || chunk_of_token[ot] < 0) {
      throw AlignmentError("token alignment failed for " + describe(inst));
    }
    PendingUnit& cu = chunk_units[chunk_of_token[ot]];
    cu.sort_key = std::min(cu.sort_key, span.start);
    cu.unit.token_indices.push_back(static_cast<int>(mt));
  }
  for (PendingUnit& cu : chunk_units) {
    if (cu.unit.token_indices.empty()) {
      throw AlignmentError("chunk lost all tokens for " + describe(inst));
    }
    pending.push_back(std::move(cu));
  }

  // Marker and token byte ranges are disjoint, so the keys are unique and
  // define the spliced constituent order.
  std::sort(pending.begin(), pending.end(),
            [](const PendingUnit& a, const PendingUnit& b) { return a.sort_key < b.sort_key; });
  out.units.reserve(pending.size());
  for (PendingUnit& pu : pending) out.units.push_back(std::move(pu.unit));

  if (out.units.size() != chunks.size() + markers.size()) {
    throw AlignmentError("constituent count invariant violated for " + describe(inst));
  }
  return out;
}

std::vector<EncodedInstance> encode_instances(const std::vector<CandidateInstance>& instances,
                                              const std::vector<ConstTree>* trees,
                                              const SubwordVocab& vocab, ModelFamily family) {
  if (family == ModelFamily::kConst) {
    if (trees == nullptr) throw AlignmentError("constituent family requires a trees file");
    if (trees->size() != instances.size()) {
      throw AlignmentError("trees file has " + std::to_string(trees->size()) +
                           " trees for " + std::to_string(instances.size()) + " instances");
    }
  }
  std::vector<EncodedInstance> out;
  out.reserve(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const ConstTree* tree = family == ModelFamily::kConst ? &(*trees)[i] : nullptr;
    out.push_back(encode_instance(instances[i], tree, vocab, family));
  }
  return out;
}

std::vector<std::string> verify_tree_alignment(const std::vector<CandidateInstance>& instances,
                                               const std::vector<ConstTree>& trees) {
  std::vector<std::string> problems;
  if (instances.size() != trees.size()) {
    problems.push_back("instance/tree count mismatch: " + std::to_string(instances.size()) +
                       " instances vs " + std::to_string(trees.size()) + " trees");
    return problems;
  }
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const std::string original = strip_markers(instances[i].marked_text);
    const std::vector<TokenSpan> tokens = pre_split(original);
    const std::vector<std::string> leaves = leaf_tokens(trees[i]);
    if (leaves.size() != tokens.size()) {
      problems.push_back("row " + std::to_string(i + 1) + ": " + std::to_string(leaves.size()) +
                         " leaves vs " + std::to_string(tokens.size()) + " sentence tokens");
      continue;
    }
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      if (leaves[t] != tokens[t].surface) {
        problems.push_back("row " + std::to_string(i + 1) + ", token " + std::to_string(t) +
                           ": leaf \"" + leaves[t] + "\" vs token \"" + tokens[t].surface + "\"");
        break;
      }
    }
  }
  return problems;
}

EncodedInstance pad_instance(const EncodedInstance& inst, int target_subwords, int target_units,
                             int pad_id) {
  EncodedInstance out = inst;
  if (target_subwords < static_cast<int>(out.subword_ids.size()) ||
      target_units < static_cast<int>(out.units.size())) {
    throw AlignmentError("pad target smaller than the instance");
  }
  out.subword_ids.resize(target_subwords, pad_id);
  out.n_pad_units = target_units - static_cast<int>(out.units.size());
  return out;
}

}  // namespace relex
