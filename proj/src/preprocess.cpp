#include "relex/preprocess.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <stdexcept>

namespace relex {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r';
}

// True if text[0..pos] ends with an abbreviation whose final '.' is at pos.
bool ends_with_abbreviation(std::string_view text, std::size_t pos) {
  for (const std::string& abbr : abbreviation_exceptions()) {
    if (pos + 1 < abbr.size()) continue;
    std::size_t start = pos + 1 - abbr.size();
    if (text.substr(start, abbr.size()) != abbr) continue;
    // The abbreviation must start at the text start or after a separator.
    if (start == 0 || is_space(text[start - 1]) || text[start - 1] == '(') return true;
  }
  return false;
}

std::vector<TokenSpan> tokens_in(const std::string& full_text, std::size_t start, std::size_t end) {
  std::vector<TokenSpan> tokens = pre_split(std::string_view(full_text).substr(start, end - start));
  for (TokenSpan& t : tokens) {
    t.start += start;
    t.end += start;
  }
  return tokens;
}

}  // namespace

const std::vector<std::string>& abbreviation_exceptions() {
  static const std::vector<std::string> kAbbreviations = {
      "Fig.", "Figs.", "et al.", "e.g.", "i.e.", "vs.", "cf.", "Eq.", "Eqs.", "No.", "approx.",
  };
  return kAbbreviations;
}

std::vector<Sentence> segment_sentences(const Document& doc) {
  const std::string& text = doc.full_text;
  std::vector<std::pair<std::size_t, std::size_t>> spans;

  std::size_t sent_start = 0;
  // Skip leading whitespace of the current sentence.
  auto advance_start = [&](std::size_t from) {
    std::size_t p = from;
    while (p < text.size() && is_space(text[p])) ++p;
    return p;
  };
  sent_start = advance_start(0);

  for (std::size_t i = sent_start; i < text.size(); ++i) {
    char c = text[i];
    bool boundary = false;
    std::size_t boundary_end = i + 1;  // sentence end (exclusive)
    if (c == '\n') {
      boundary = true;
      boundary_end = i;
    } else if ((c == '.' || c == '?' || c == '!') && i + 1 < text.size() && is_space(text[i + 1])) {
      std::size_t next = advance_start(i + 1);
      if (next < text.size() &&
          (std::isupper(static_cast<unsigned char>(text[next])) != 0 ||
           std::isdigit(static_cast<unsigned char>(text[next])) != 0)) {
        if (!(c == '.' && ends_with_abbreviation(text, i))) boundary = true;
      }
    }
    if (boundary && boundary_end > sent_start) {
      spans.emplace_back(sent_start, boundary_end);
      sent_start = advance_start(boundary_end);
      if (sent_start > i) i = sent_start - 1;
    }
  }
  if (sent_start < text.size()) {
    std::size_t last = text.size();
    while (last > sent_start && is_space(text[last - 1])) --last;
    if (last > sent_start) spans.emplace_back(sent_start, last);
  }
  if (spans.empty()) spans.emplace_back(0, text.size());

  std::vector<Sentence> sentences;
  sentences.reserve(spans.size());
  for (std::size_t i = 0; i < spans.size(); ++i) {
    Sentence s;
    s.doc_id = doc.doc_id;
    s.index = static_cast<int>(i);
    s.start = spans[i].first;
    s.end = spans[i].second;
    s.tokens = tokens_in(text, s.start, s.end);
    sentences.push_back(std::move(s));
  }
  return sentences;
}

EntityMapping map_entities(const Document& doc, std::vector<Sentence> sentences,
                           const std::vector<Entity>& entities, PrepReport* report) {
  auto sentence_for_start = [&](std::size_t pos) -> int {
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      if (pos < sentences[i].end) return static_cast<int>(i);
    }
    return static_cast<int>(sentences.size()) - 1;
  };

  // Repair pass: merge any sentence pair split through an entity span.
  bool changed = true;
  while (changed) {
    changed = false;
    for (const Entity& ent : entities) {
      int si = sentence_for_start(ent.start);
      if (si < 0) continue;
      if (ent.start < sentences[si].start) {
        // Entity starts in inter-sentence whitespace; pull the sentence
        // start back so the span stays inside one sentence.
        sentences[si].start = ent.start;
        sentences[si].tokens = tokens_in(doc.full_text, sentences[si].start, sentences[si].end);
        changed = true;
        break;
      }
      if (ent.end <= sentences[si].end) continue;
      if (si + 1 >= static_cast<int>(sentences.size())) continue;
      if (report != nullptr) {
        report->split_word_errors.push_back(doc.doc_id + "\t" + ent.entity_id + "\t\"" +
                                            ent.surface + "\" split across sentences " +
                                            std::to_string(si) + "/" + std::to_string(si + 1));
        report->corrected += 1;
      }
      Sentence merged = sentences[si];
      merged.end = sentences[si + 1].end;
      merged.tokens = tokens_in(doc.full_text, merged.start, merged.end);
      sentences[si] = std::move(merged);
      sentences.erase(sentences.begin() + si + 1);
      for (std::size_t i = 0; i < sentences.size(); ++i) sentences[i].index = static_cast<int>(i);
      changed = true;
      break;
    }
  }

  EntityMapping mapping;
  for (const Entity& ent : entities) {
    mapping.sentence_of_entity[ent.entity_id] = sentence_for_start(ent.start);
  }
  mapping.sentences = std::move(sentences);
  return mapping;
}

std::vector<CandidateInstance> enumerate_candidates(const Document& doc,
                                                    const EntityMapping& mapping,
                                                    const std::vector<Entity>& entities,
                                                    const std::vector<RelationAnnotation>& relations,
                                                    PrepReport* report) {
  // Gold labels per (subject, object) pair.
  std::map<std::pair<std::string, std::string>, std::set<std::string>> gold;
  for (const RelationAnnotation& rel : relations) {
    auto s_it = mapping.sentence_of_entity.find(rel.subject_id);
    auto o_it = mapping.sentence_of_entity.find(rel.object_id);
    if (s_it == mapping.sentence_of_entity.end() || o_it == mapping.sentence_of_entity.end()) {
      continue;  // dangling references are rejected at load time
    }
    if (s_it->second != o_it->second) {
      if (report != nullptr) {
        report->cross_sentence_relations.push_back(
            doc.doc_id + "\t" + rel.label + "\t" + rel.subject_id + "\t" + rel.object_id +
            "\tsentences " + std::to_string(s_it->second) + "/" + std::to_string(o_it->second));
      }
      continue;
    }
    gold[{rel.subject_id, rel.object_id}].insert(rel.label);
  }

  // Entities per sentence, chemicals and genes separately, by (start, id).
  std::vector<std::vector<const Entity*>> chems(mapping.sentences.size());
  std::vector<std::vector<const Entity*>> genes(mapping.sentences.size());
  for (const Entity& ent : entities) {
    auto it = mapping.sentence_of_entity.find(ent.entity_id);
    if (it == mapping.sentence_of_entity.end() || it->second < 0) continue;
    auto& bucket = ent.etype == EntityType::kChemical ? chems[it->second] : genes[it->second];
    bucket.push_back(&ent);
  }
  auto by_start = [](const Entity* a, const Entity* b) {
    return a->start != b->start ? a->start < b->start : a->entity_id < b->entity_id;
  };

  std::vector<CandidateInstance> instances;
  for (std::size_t si = 0; si < mapping.sentences.size(); ++si) {
    std::sort(chems[si].begin(), chems[si].end(), by_start);
    std::sort(genes[si].begin(), genes[si].end(), by_start);
    const Sentence& sent = mapping.sentences[si];
    const std::string sent_text = sent.text(doc);
    if (!chems[si].empty() && !genes[si].empty()) {
      std::string_view sv(sent_text);
      if (sv.find(kSubjectMarker) != std::string_view::npos ||
          sv.find(kObjectMarker) != std::string_view::npos ||
          sv.find(kOverlapMarker) != std::string_view::npos) {
        if (report != nullptr) {
          report->marker_collisions.push_back(doc.doc_id + "\tsentence " + std::to_string(si) +
                                              " contains a reserved marker string; pairs skipped");
          for (const Entity* chem : chems[si]) {
            for (const Entity* gene : genes[si]) {
              auto g_it = gold.find({chem->entity_id, gene->entity_id});
              if (g_it == gold.end()) continue;
              for (const std::string& label : g_it->second) {
                report->marker_collisions.push_back(doc.doc_id + "\tlost relation " + label + "\t" +
                                                    chem->entity_id + "\t" + gene->entity_id);
              }
            }
          }
        }
        continue;
      }
    }
    for (const Entity* chem : chems[si]) {
      for (const Entity* gene : genes[si]) {
        CandidateInstance inst;
        inst.doc_id = doc.doc_id;
        inst.sentence_index = static_cast<int>(si);
        inst.subject_id = chem->entity_id;
        inst.object_id = gene->entity_id;
        MarkedText marked =
            insert_markers(sent_text, chem->start - sent.start, chem->end - sent.start,
                           gene->start - sent.start, gene->end - sent.start);
        inst.marked_text = std::move(marked.text);
        inst.overlap_case = marked.overlap_case;
        auto g_it = gold.find({chem->entity_id, gene->entity_id});
        if (g_it != gold.end()) {
          inst.gold_labels.assign(g_it->second.begin(), g_it->second.end());
        }
        instances.push_back(std::move(inst));
      }
    }
  }
  return instances;
}

MarkedText insert_markers(std::string_view sentence_text, std::size_t subject_start,
                          std::size_t subject_end, std::size_t object_start,
                          std::size_t object_end) {
  if (subject_start >= subject_end || subject_end > sentence_text.size() ||
      object_start >= object_end || object_end > sentence_text.size()) {
    throw std::out_of_range("marker span out of range");
  }
  MarkedText out;
  out.text.assign(sentence_text);
  const bool overlap = subject_start < object_end && object_start < subject_end;
  if (overlap) {
    std::size_t u_start = std::min(subject_start, object_start);
    std::size_t u_end = std::max(subject_end, object_end);
    out.text.insert(u_end, kOverlapMarker);
    out.text.insert(u_start, kOverlapMarker);
    out.overlap_case = true;
    return out;
  }
  // Insert right to left so earlier offsets stay valid.
  struct Ins {
    std::size_t pos;
    std::string_view marker;
  };
  std::vector<Ins> insertions = {{subject_end, kSubjectMarker},
                                 {subject_start, kSubjectMarker},
                                 {object_end, kObjectMarker},
                                 {object_start, kObjectMarker}};
  std::sort(insertions.begin(), insertions.end(),
            [](const Ins& a, const Ins& b) { return a.pos > b.pos; });
  for (const Ins& ins : insertions) out.text.insert(ins.pos, ins.marker);
  out.overlap_case = false;
  return out;
}

std::string strip_markers(std::string_view marked, std::vector<MarkerOccurrence>* occurrences) {
  std::string out;
  out.reserve(marked.size());
  std::size_t i = 0;
  while (i < marked.size()) {
    std::string_view which;
    if (marker_at(marked, i, &which)) {
      if (occurrences != nullptr) {
        occurrences->push_back({std::string(which), i, out.size()});
      }
      i += which.size();
      continue;
    }
    out.push_back(marked[i]);
    ++i;
  }
  return out;
}

std::vector<CandidateInstance> prepare_corpus(const Corpus& corpus, PrepReport* report) {
  std::vector<CandidateInstance> all;
  for (const Document& doc : corpus.documents) {
    std::vector<Entity> doc_entities;
    auto e_it = corpus.entities_of_doc.find(doc.doc_id);
    if (e_it != corpus.entities_of_doc.end()) {
      for (std::size_t idx : e_it->second) doc_entities.push_back(corpus.entities[idx]);
    }
    std::vector<RelationAnnotation> doc_relations;
    auto r_it = corpus.relations_of_doc.find(doc.doc_id);
    if (r_it != corpus.relations_of_doc.end()) {
      for (std::size_t idx : r_it->second) doc_relations.push_back(corpus.relations[idx]);
    }
    EntityMapping mapping = map_entities(doc, segment_sentences(doc), doc_entities, report);
    std::vector<CandidateInstance> instances =
        enumerate_candidates(doc, mapping, doc_entities, doc_relations, report);
    all.insert(all.end(), std::make_move_iterator(instances.begin()),
               std::make_move_iterator(instances.end()));
  }
  return all;
}

std::vector<std::string> PrepReport::lines() const {
  std::vector<std::string> out;
  for (const std::string& e : split_word_errors) out.push_back("split_word_error\t" + e);
  for (const std::string& e : cross_sentence_relations) out.push_back("cross_sentence_relation\t" + e);
  for (const std::string& e : marker_collisions) out.push_back("marker_collision\t" + e);
  out.push_back("corrected\t" + std::to_string(corrected));
  return out;
}

void write_instances(const std::string& path, const std::vector<CandidateInstance>& instances) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const CandidateInstance& inst : instances) {
    out << inst.doc_id << '\t' << inst.sentence_index << '\t' << inst.subject_id << '\t'
        << inst.object_id << '\t' << (inst.overlap_case ? 1 : 0) << '\t' << inst.marked_text
        << '\t' << join(inst.gold_labels, '|') << '\n';
  }
}

std::vector<CandidateInstance> read_instances(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<CandidateInstance> instances;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols = split_tabs(line);
    if (cols.size() != 7) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": instances row must have 7 columns, got " +
                               std::to_string(cols.size()));
    }
    CandidateInstance inst;
    inst.doc_id = cols[0];
    inst.sentence_index = std::stoi(cols[1]);
    inst.subject_id = cols[2];
    inst.object_id = cols[3];
    if (cols[4] != "0" && cols[4] != "1") {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": overlap flag must be 0 or 1");
    }
    inst.overlap_case = cols[4] == "1";
    inst.marked_text = cols[5];
    if (!cols[6].empty()) {
      std::size_t start = 0;
      while (true) {
        std::size_t bar = cols[6].find('|', start);
        if (bar == std::string::npos) {
          inst.gold_labels.push_back(cols[6].substr(start));
          break;
        }
        inst.gold_labels.push_back(cols[6].substr(start, bar - start));
        start = bar + 1;
      }
      std::sort(inst.gold_labels.begin(), inst.gold_labels.end());
    }
    instances.push_back(std::move(inst));
  }
  return instances;
}

}  // namespace relex
