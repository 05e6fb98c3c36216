#include "relex/ensemble.hpp"

#include <algorithm>
#include <fstream>

#include "relex/text.hpp"

namespace relex {

EnsembleSpec select_members(std::vector<MemberInfo> candidates, SelectionRule rule, int k) {
  if (candidates.empty()) throw EnsembleError("no candidate members");
  // Rank by dev F1 descending, ties by seed ascending.
  std::stable_sort(candidates.begin(), candidates.end(), [](const MemberInfo& a, const MemberInfo& b) {
    if (a.dev_f1 != b.dev_f1) return a.dev_f1 > b.dev_f1;
    return a.seed < b.seed;
  });
  EnsembleSpec spec;
  if (rule == SelectionRule::kDropWorst) {
    if (candidates.size() < 2) throw EnsembleError("drop_worst needs at least two candidates");
    spec.members.assign(candidates.begin(), candidates.end() - 1);
    spec.rule_description = "drop_worst";
  } else {
    if (k < 1 || k > static_cast<int>(candidates.size())) {
      throw EnsembleError("top_k: k=" + std::to_string(k) + " out of range for " +
                          std::to_string(candidates.size()) + " candidates");
    }
    spec.members.assign(candidates.begin(), candidates.begin() + k);
    spec.rule_description = "top_k:" + std::to_string(k);
  }
  return spec;
}

const char* vote_mode_name(VoteMode m) {
  return m == VoteMode::kMajority ? "majority" : "plurality";
}

VoteMode parse_vote_mode(const std::string& s) {
  if (s == "majority") return VoteMode::kMajority;
  if (s == "plurality") return VoteMode::kPlurality;
  throw EnsembleError("unknown vote mode: " + s + " (expected majority or plurality)");
}

PredictionSet majority_vote(const std::vector<PredictionSet>& members, VoteMode mode) {
  if (members.empty()) throw EnsembleError("cannot vote with zero members");
  const std::size_t m = members.size();
  for (std::size_t i = 1; i < m; ++i) {
    if (members[i].size() != members[0].size()) {
      throw EnsembleError("member " + std::to_string(i) + " covers a different instance set");
    }
  }

  PredictionSet out;
  for (const auto& [key, first_set] : members[0]) {
    std::map<std::string, std::size_t> votes;
    for (const PredictionSet& member : members) {
      auto it = member.find(key);
      if (it == member.end()) {
        throw EnsembleError("instance key mismatch across members: " + key.doc_id + "/" +
                            key.subject_id + "/" + key.object_id);
      }
      for (const std::string& label : it->second) ++votes[label];
    }
    std::set<std::string> winners;
    std::size_t top = 0;
    for (const auto& [label, count] : votes) top = std::max(top, count);
    const bool threshold_met =
        mode == VoteMode::kMajority ? 2 * top > m : top > 0;
    if (threshold_met) {
      for (const auto& [label, count] : votes) {
        if (count == top) winners.insert(label);
      }
    }
    out[key] = std::move(winners);
  }
  return out;
}

std::map<std::string, long long> count_predictions_by_label(const PredictionSet& predictions) {
  std::map<std::string, long long> counts;
  for (const auto& [key, labels] : predictions) {
    for (const std::string& label : labels) ++counts[label];
  }
  return counts;
}

void write_predictions(const std::string& path, const PredictionSet& predictions) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw EnsembleError("cannot write " + path);
  for (const auto& [key, labels] : predictions) {
    for (const std::string& label : labels) {
      out << key.doc_id << '\t' << label << '\t' << "Arg1:" << key.subject_id << '\t'
          << "Arg2:" << key.object_id << '\n';
    }
  }
}

PredictionSet read_predictions(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EnsembleError("cannot open " + path);
  PredictionSet out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols = split_tabs(line);
    if (cols.size() != 4 || cols[2].rfind("Arg1:", 0) != 0 || cols[3].rfind("Arg2:", 0) != 0) {
      throw EnsembleError(path + ":" + std::to_string(line_no) +
                          ": prediction rows use the relations format "
                          "doc_id<TAB>label<TAB>Arg1:id<TAB>Arg2:id");
    }
    // Duplicate rows for the same (key, label) collapse into the set.
    out[{cols[0], cols[2].substr(5), cols[3].substr(5)}].insert(cols[1]);
  }
  return out;
}

PredictionSet vote_files(const std::vector<std::string>& paths, VoteMode mode) {
  if (paths.size() < 2) throw EnsembleError("vote needs at least two prediction files");
  std::vector<PredictionSet> members;
  members.reserve(paths.size());
  for (const std::string& path : paths) members.push_back(read_predictions(path));
  // Relations files only carry positive rows; align on the key union.
  std::set<InstanceKey> keys;
  for (const PredictionSet& member : members) {
    for (const auto& [key, labels] : member) keys.insert(key);
  }
  for (PredictionSet& member : members) {
    for (const InstanceKey& key : keys) member.try_emplace(key);
  }
  return majority_vote(members, mode);
}

}  // namespace relex
