#pragma once

#include <string>

#include "relex/corpus.hpp"
#include "relex/encoder.hpp"
#include "relex/vocab.hpp"

namespace relex {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A self-contained trained model: everything needed to run predictions.
struct Checkpoint {
  EncoderConfig config;
  SubwordVocab vocab;
  LabelCatalog catalog;
  ModelParams params;
};

// Binary format with a versioned magic string; doubles are stored as raw
// little-endian IEEE-754 bytes so reloads are bit-exact.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace relex
