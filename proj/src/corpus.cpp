#include "relex/corpus.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>
#include <sstream>

#include "relex/text.hpp"

namespace relex {

namespace {

struct ErrorSink {
  std::vector<std::string> errors;

  void add(const std::string& file, std::size_t line, const std::string& msg) {
    errors.push_back(file + ":" + std::to_string(line) + ": " + msg);
  }

  void raise_if_any(const std::string& preamble = "") {
    if (errors.empty()) return;
    std::ostringstream os;
    if (!preamble.empty()) os << preamble << "\n";
    std::size_t shown = std::min<std::size_t>(errors.size(), 50);
    for (std::size_t i = 0; i < shown; ++i) os << errors[i] << "\n";
    if (shown < errors.size()) {
      os << "... and " << (errors.size() - shown) << " more errors\n";
    }
    throw CorpusError(os.str());
  }
};

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

bool parse_offset(const std::string& s, std::size_t* out) {
  if (s.empty()) return false;
  std::size_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
    v = v * 10 + static_cast<std::size_t>(c - '0');
  }
  *out = v;
  return true;
}

}  // namespace

EntityType parse_entity_type(const std::string& s) {
  if (s == "CHEMICAL") return EntityType::kChemical;
  // DrugProt marks genes as GENE, GENE-Y or GENE-N.
  if (s == "GENE" || s.rfind("GENE-", 0) == 0) return EntityType::kGene;
  throw CorpusError("unknown entity type: " + s);
}

const char* entity_type_name(EntityType t) {
  return t == EntityType::kChemical ? "CHEMICAL" : "GENE";
}

int LabelCatalog::index_of(const std::string& label) const {
  auto it = std::lower_bound(labels.begin(), labels.end(), label);
  if (it == labels.end() || *it != label) return -1;
  return static_cast<int>(it - labels.begin());
}

long long LabelCatalog::total_count() const {
  long long total = 0;
  for (long long c : counts) total += c;
  return total;
}

const Document& Corpus::document(const std::string& doc_id) const {
  auto it = doc_index.find(doc_id);
  if (it == doc_index.end()) throw CorpusError("unknown document: " + doc_id);
  return documents[it->second];
}

const Entity* Corpus::find_entity(const std::string& doc_id, const std::string& entity_id) const {
  auto it = entities_of_doc.find(doc_id);
  if (it == entities_of_doc.end()) return nullptr;
  for (std::size_t idx : it->second) {
    if (entities[idx].entity_id == entity_id) return &entities[idx];
  }
  return nullptr;
}

void Corpus::rebuild_indexes() {
  doc_index.clear();
  entities_of_doc.clear();
  relations_of_doc.clear();
  for (std::size_t i = 0; i < documents.size(); ++i) doc_index[documents[i].doc_id] = i;
  for (std::size_t i = 0; i < entities.size(); ++i) {
    entities_of_doc[entities[i].doc_id].push_back(i);
  }
  for (std::size_t i = 0; i < relations.size(); ++i) {
    relations_of_doc[relations[i].doc_id].push_back(i);
  }
}

Corpus load_corpus(const std::string& abstracts_path,
                   const std::string& entities_path,
                   const std::optional<std::string>& relations_path) {
  Corpus corpus;
  ErrorSink sink;

  const std::vector<std::string> abstract_lines = read_lines(abstracts_path);
  for (std::size_t i = 0; i < abstract_lines.size(); ++i) {
    const std::string& line = abstract_lines[i];
    if (line.empty()) continue;
    std::vector<std::string> cols = split_tabs(line);
    if (cols.size() != 3) {
      sink.add(abstracts_path, i + 1,
               "malformed abstracts row: expected 3 columns, got " + std::to_string(cols.size()));
      continue;
    }
    if (cols[0].empty()) {
      sink.add(abstracts_path, i + 1, "empty doc_id");
      continue;
    }
    if (corpus.doc_index.count(cols[0]) != 0) {
      sink.add(abstracts_path, i + 1, "duplicate doc_id: " + cols[0]);
      continue;
    }
    Document doc;
    doc.doc_id = cols[0];
    doc.title = cols[1];
    doc.abstract_text = cols[2];
    doc.full_text = doc.title + "\n" + doc.abstract_text;
    corpus.doc_index[doc.doc_id] = corpus.documents.size();
    corpus.documents.push_back(std::move(doc));
  }

  // Span mismatches are collected so a uniform off-by-one (a plausible
  // title/abstract separator convention difference) can be diagnosed at
  // corpus level rather than entity by entity.
  int mismatches = 0, fit_minus_one = 0, fit_plus_one = 0;

  const std::vector<std::string> entity_lines = read_lines(entities_path);
  std::set<std::pair<std::string, std::string>> seen_entities;
  for (std::size_t i = 0; i < entity_lines.size(); ++i) {
    const std::string& line = entity_lines[i];
    if (line.empty()) continue;
    std::vector<std::string> cols = split_tabs(line);
    if (cols.size() != 6) {
      sink.add(entities_path, i + 1,
               "malformed entities row: expected 6 columns, got " + std::to_string(cols.size()));
      continue;
    }
    auto doc_it = corpus.doc_index.find(cols[0]);
    if (doc_it == corpus.doc_index.end()) {
      sink.add(entities_path, i + 1, "entity " + cols[1] + " references unknown document " + cols[0]);
      continue;
    }
    Entity ent;
    ent.doc_id = cols[0];
    ent.entity_id = cols[1];
    try {
      ent.etype = parse_entity_type(cols[2]);
      ent.raw_type = cols[2];
    } catch (const CorpusError& e) {
      sink.add(entities_path, i + 1, e.what());
      continue;
    }
    if (!parse_offset(cols[3], &ent.start) || !parse_offset(cols[4], &ent.end)) {
      sink.add(entities_path, i + 1, "non-numeric span for entity " + ent.entity_id);
      continue;
    }
    ent.raw_start = cols[3];
    ent.raw_end = cols[4];
    ent.surface = cols[5];
    if (!seen_entities.insert({ent.doc_id, ent.entity_id}).second) {
      sink.add(entities_path, i + 1, "duplicate entity id " + ent.entity_id + " in " + ent.doc_id);
      continue;
    }
    const std::string& text = corpus.documents[doc_it->second].full_text;
    if (ent.start >= ent.end || ent.end > text.size()) {
      // Offsets may be counted in code points while we slice bytes; retry
      // with a code point interpretation before rejecting.
      std::size_t b_start = utf8_byte_offset(text, ent.start);
      std::size_t b_end = utf8_byte_offset(text, ent.end);
      if (b_start < b_end && b_end <= text.size() &&
          text.compare(b_start, b_end - b_start, ent.surface) == 0) {
        ent.start = b_start;
        ent.end = b_end;
      } else {
        sink.add(entities_path, i + 1,
                 "span out of range for entity " + ent.entity_id + " [" + cols[3] + "," + cols[4] +
                     ") in document of length " + std::to_string(text.size()));
        continue;
      }
    }
    if (text.compare(ent.start, ent.end - ent.start, ent.surface) != 0) {
      std::size_t b_start = utf8_byte_offset(text, ent.start);
      std::size_t b_end = utf8_byte_offset(text, ent.end);
      if (b_end <= text.size() && b_start < b_end &&
          text.compare(b_start, b_end - b_start, ent.surface) == 0) {
        ent.start = b_start;
        ent.end = b_end;
      } else {
        ++mismatches;
        std::size_t len = ent.end - ent.start;
        if (ent.start >= 1 && text.compare(ent.start - 1, len, ent.surface) == 0) ++fit_minus_one;
        if (ent.end + 1 <= text.size() && text.compare(ent.start + 1, len, ent.surface) == 0) {
          ++fit_plus_one;
        }
        sink.add(entities_path, i + 1,
                 "span/surface mismatch for entity " + ent.entity_id + ": expected \"" +
                     ent.surface + "\", found \"" + text.substr(ent.start, len) + "\"");
        continue;
      }
    }
    corpus.entities.push_back(std::move(ent));
  }

  std::string preamble;
  if (mismatches > 0 && (fit_minus_one == mismatches || fit_plus_one == mismatches)) {
    preamble = "corpus diagnostic: all " + std::to_string(mismatches) +
               " span mismatches fit a uniform offset shift of " +
               (fit_minus_one == mismatches ? "-1" : "+1") +
               "; the corpus likely counts the title/abstract separator differently";
  }

  if (relations_path.has_value()) {
    corpus.rebuild_indexes();
    const std::vector<std::string> relation_lines = read_lines(*relations_path);
    std::set<std::array<std::string, 4>> seen;
    for (std::size_t i = 0; i < relation_lines.size(); ++i) {
      const std::string& line = relation_lines[i];
      if (line.empty()) continue;
      std::vector<std::string> cols = split_tabs(line);
      if (cols.size() != 4) {
        sink.add(*relations_path, i + 1,
                 "malformed relations row: expected 4 columns, got " + std::to_string(cols.size()));
        continue;
      }
      if (cols[2].rfind("Arg1:", 0) != 0 || cols[3].rfind("Arg2:", 0) != 0) {
        sink.add(*relations_path, i + 1, "argument columns must be Arg1:<id> and Arg2:<id>");
        continue;
      }
      RelationAnnotation rel;
      rel.doc_id = cols[0];
      rel.label = cols[1];
      rel.subject_id = cols[2].substr(5);
      rel.object_id = cols[3].substr(5);
      if (corpus.doc_index.count(rel.doc_id) == 0) {
        sink.add(*relations_path, i + 1, "relation references unknown document " + rel.doc_id);
        continue;
      }
      const Entity* subj = corpus.find_entity(rel.doc_id, rel.subject_id);
      const Entity* obj = corpus.find_entity(rel.doc_id, rel.object_id);
      if (subj == nullptr) {
        sink.add(*relations_path, i + 1,
                 "dangling entity reference " + rel.subject_id + " in " + rel.doc_id);
        continue;
      }
      if (obj == nullptr) {
        sink.add(*relations_path, i + 1,
                 "dangling entity reference " + rel.object_id + " in " + rel.doc_id);
        continue;
      }
      if (subj->etype != EntityType::kChemical) {
        sink.add(*relations_path, i + 1, "Arg1 of " + rel.label + " must be CHEMICAL, " +
                                             rel.subject_id + " is " + entity_type_name(subj->etype));
        continue;
      }
      if (obj->etype != EntityType::kGene) {
        sink.add(*relations_path, i + 1, "Arg2 of " + rel.label + " must be GENE, " +
                                             rel.object_id + " is " + entity_type_name(obj->etype));
        continue;
      }
      if (!seen.insert({rel.doc_id, rel.subject_id, rel.object_id, rel.label}).second) {
        sink.add(*relations_path, i + 1,
                 "duplicate relation row (" + rel.doc_id + ", " + rel.subject_id + ", " +
                     rel.object_id + ", " + rel.label + ")");
        continue;
      }
      corpus.relations.push_back(std::move(rel));
    }
  }

  sink.raise_if_any(preamble);
  corpus.rebuild_indexes();
  return corpus;
}

LabelCatalog build_label_catalog(const Corpus& corpus) {
  if (corpus.relations.empty()) {
    throw CorpusError("cannot build a label catalog from an empty relation set");
  }
  std::map<std::string, long long> counts;
  for (const RelationAnnotation& rel : corpus.relations) ++counts[rel.label];
  LabelCatalog catalog;
  for (const auto& [label, count] : counts) {
    catalog.labels.push_back(label);
    catalog.counts.push_back(count);
  }
  return catalog;
}

void write_abstracts(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write " + path);
  for (const Document& doc : corpus.documents) {
    out << doc.doc_id << '\t' << doc.title << '\t' << doc.abstract_text << '\n';
  }
}

void write_entities(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write " + path);
  for (const Entity& ent : corpus.entities) {
    const std::string& type = ent.raw_type.empty() ? entity_type_name(ent.etype) : ent.raw_type;
    const std::string start = ent.raw_start.empty() ? std::to_string(ent.start) : ent.raw_start;
    const std::string end = ent.raw_end.empty() ? std::to_string(ent.end) : ent.raw_end;
    out << ent.doc_id << '\t' << ent.entity_id << '\t' << type << '\t' << start << '\t' << end
        << '\t' << ent.surface << '\n';
  }
}

void write_relations(const std::string& path, const std::vector<RelationAnnotation>& relations) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write " + path);
  for (const RelationAnnotation& rel : relations) {
    out << rel.doc_id << '\t' << rel.label << '\t' << "Arg1:" << rel.subject_id << '\t'
        << "Arg2:" << rel.object_id << '\n';
  }
}

}  // namespace relex
