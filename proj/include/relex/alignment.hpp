#pragma once

#include <optional>
#include <string>
#include <vector>

#include "relex/encoder.hpp"
#include "relex/preprocess.hpp"
#include "relex/syntax.hpp"
#include "relex/vocab.hpp"

namespace relex {

struct AlignmentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Builds the model input for one candidate instance. Constituency trees
// are parsed over the original (unmarked) sentence tokens; marker tokens
// become extra SINGLETON units placed by their byte position in the
// marked text, so the constituent sequence holds exactly
// #chunks + #markers units. The plain family ignores the tree.
EncodedInstance encode_instance(const CandidateInstance& inst, const ConstTree* tree,
                                const SubwordVocab& vocab, ModelFamily family);

// Encodes a whole instances file; `trees` must align 1:1 with `instances`
// for the constituent family and may be null for the plain family.
std::vector<EncodedInstance> encode_instances(const std::vector<CandidateInstance>& instances,
                                              const std::vector<ConstTree>* trees,
                                              const SubwordVocab& vocab, ModelFamily family);

// parse-import check: every tree's leaf tokens must equal the
// tokenization of the instance sentence after markers are stripped.
// Returns one message per mismatching row; empty means fully aligned.
std::vector<std::string> verify_tree_alignment(const std::vector<CandidateInstance>& instances,
                                               const std::vector<ConstTree>& trees);

// Appends [PAD] subwords and masked constituent slots; used to batch
// heterogeneous lengths and to test padding invariance.
EncodedInstance pad_instance(const EncodedInstance& inst, int target_subwords, int target_units,
                             int pad_id);

}  // namespace relex
