#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace relex {

struct CorpusError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class EntityType { kChemical, kGene };

EntityType parse_entity_type(const std::string& s);  // throws CorpusError on unknown type
const char* entity_type_name(EntityType t);

struct Document {
  std::string doc_id;
  std::string title;
  std::string abstract_text;
  // title + '\n' + abstract_text; all entity spans index into this space.
  std::string full_text;
};

struct Entity {
  std::string entity_id;
  std::string doc_id;
  EntityType etype = EntityType::kChemical;
  std::string raw_type;   // type string as read (GENE-Y/GENE-N preserved for round-trips)
  std::size_t start = 0;  // byte offset into full_text
  std::size_t end = 0;    // exclusive
  // Offset columns as read. The loader accepts code-point offsets and
  // converts them to bytes; these keep serialization row-exact.
  std::string raw_start, raw_end;
  std::string surface;
};

struct RelationAnnotation {
  std::string doc_id;
  std::string label;
  std::string subject_id;  // CHEMICAL argument
  std::string object_id;   // GENE argument
};

// Canonical index space for all logit/label vectors. Labels are sorted
// lexicographically; counts are annotation counts per label.
struct LabelCatalog {
  std::vector<std::string> labels;
  std::vector<long long> counts;

  std::size_t size() const { return labels.size(); }
  int index_of(const std::string& label) const;
  long long total_count() const;
};

// Read-only after construction; safe to share across threads.
struct Corpus {
  std::vector<Document> documents;
  std::vector<Entity> entities;
  std::vector<RelationAnnotation> relations;

  std::map<std::string, std::size_t> doc_index;
  std::map<std::string, std::vector<std::size_t>> entities_of_doc;
  std::map<std::string, std::vector<std::size_t>> relations_of_doc;

  const Document& document(const std::string& doc_id) const;
  const Entity* find_entity(const std::string& doc_id, const std::string& entity_id) const;
  void rebuild_indexes();
};

// Loads a DrugProt-style corpus from three TSV files:
//   abstracts: doc_id <TAB> title <TAB> abstract
//   entities:  doc_id <TAB> entity_id <TAB> type <TAB> start <TAB> end <TAB> text
//   relations: doc_id <TAB> label <TAB> Arg1:entity_id <TAB> Arg2:entity_id
// relations_path may be absent (blind test sets). All rows are
// cross-validated; every violation is reported with file and line.
Corpus load_corpus(const std::string& abstracts_path,
                   const std::string& entities_path,
                   const std::optional<std::string>& relations_path = std::nullopt);

LabelCatalog build_label_catalog(const Corpus& corpus);

// Round-trip serialization of the three TSV files.
void write_abstracts(const std::string& path, const Corpus& corpus);
void write_entities(const std::string& path, const Corpus& corpus);
void write_relations(const std::string& path, const std::vector<RelationAnnotation>& relations);

}  // namespace relex
