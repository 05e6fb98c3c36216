#pragma once

#include <map>
#include <string>
#include <vector>

#include "relex/corpus.hpp"
#include "relex/text.hpp"

namespace relex {

struct Sentence {
  std::string doc_id;
  int index = 0;
  std::size_t start = 0;  // byte offsets into full_text
  std::size_t end = 0;
  std::vector<TokenSpan> tokens;  // token offsets are absolute into full_text

  std::string text(const Document& doc) const { return doc.full_text.substr(start, end - start); }
};

// One (CHEMICAL, GENE) candidate pair in one sentence.
struct CandidateInstance {
  std::string doc_id;
  int sentence_index = 0;
  std::string subject_id;  // CHEMICAL
  std::string object_id;   // GENE
  bool overlap_case = false;
  std::string marked_text;
  std::vector<std::string> gold_labels;  // sorted, unique; empty = negative instance
};

struct PrepReport {
  std::vector<std::string> split_word_errors;
  std::vector<std::string> cross_sentence_relations;
  std::vector<std::string> marker_collisions;
  int corrected = 0;  // sentence merges applied by the repair pass

  std::vector<std::string> lines() const;
};

// Deterministic rule-based splitter standing in for an external tool:
// boundary at '.', '?' or '!' followed by whitespace and an uppercase
// letter or digit, with an abbreviation exception list; '\n' is always a
// boundary (it separates title from abstract). The whole text becomes a
// single sentence when no boundary is found.
std::vector<Sentence> segment_sentences(const Document& doc);

const std::vector<std::string>& abbreviation_exceptions();

struct EntityMapping {
  std::vector<Sentence> sentences;               // after the repair pass
  std::map<std::string, int> sentence_of_entity;  // entity_id -> sentence index
};

// Assigns each entity to the sentence containing its span. An entity
// straddling a boundary triggers a split-word error and a repair pass
// that merges the two sentences.
EntityMapping map_entities(const Document& doc, std::vector<Sentence> sentences,
                           const std::vector<Entity>& entities, PrepReport* report);

// Emits one instance per co-occurring (CHEMICAL, GENE) pair, ordered by
// (sentence index, subject start, object start). Gold relations whose
// arguments fall in different sentences are recorded in the report and
// excluded.
std::vector<CandidateInstance> enumerate_candidates(const Document& doc,
                                                    const EntityMapping& mapping,
                                                    const std::vector<Entity>& entities,
                                                    const std::vector<RelationAnnotation>& relations,
                                                    PrepReport* report);

struct MarkedText {
  std::string text;
  bool overlap_case = false;
};

// Wraps the subject span in "@@" and the object span in "$$"; overlapping
// spans get the union span wrapped in "¢¢" instead. Spans are
// sentence-relative byte offsets. Throws std::out_of_range on bad spans.
MarkedText insert_markers(std::string_view sentence_text, std::size_t subject_start,
                          std::size_t subject_end, std::size_t object_start,
                          std::size_t object_end);

struct MarkerOccurrence {
  std::string marker;
  std::size_t pos_marked = 0;    // byte position in the marked text
  std::size_t pos_original = 0;  // byte position in the stripped text
};

// Removes every marker occurrence; records where each one sat.
std::string strip_markers(std::string_view marked, std::vector<MarkerOccurrence>* occurrences = nullptr);

// Whole-corpus driver: segment, map, enumerate for every document.
std::vector<CandidateInstance> prepare_corpus(const Corpus& corpus, PrepReport* report);

// Instances file: doc_id, sentence_index, subject_id, object_id,
// overlap_flag, marked_text, |-joined labels (empty for negatives).
void write_instances(const std::string& path, const std::vector<CandidateInstance>& instances);
std::vector<CandidateInstance> read_instances(const std::string& path);

}  // namespace relex
